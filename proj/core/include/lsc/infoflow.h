#pragma once

#include <cstdint>
#include <vector>

#include "lsc/dataset.h"
#include "lsc/entropy.h"
#include "lsc/model.h"
#include "lsc/rd_theory.h"

namespace lsc::info {

/// Spatially paired latent fibers (1x1xL_j vectors) and feature fibers
/// (s x s x C_F windows, flattened), one pair per latent site.
struct FiberSet {
  std::vector<std::vector<double>> latent_fibers;
  std::vector<std::vector<double>> feature_fibers;
};

FiberSet extract_fibers(const Tensor& yhat_j, const Tensor& features, int upscale);

struct ClusterResult {
  std::vector<int> labels;  // in [0, k)
  int k = 0;
  bool degenerate = false;  // all fibers identical
};

/// Seeded k-means (k-means++ init, Lloyd iterations, ties to the lowest
/// center index).
ClusterResult cluster_features(const std::vector<std::vector<double>>& fibers, int k, std::uint64_t seed);

enum class MiEstimator { kde, discrete_plugin };

struct MIReport {
  double mi_clamped = 0.0;  // max(raw, 0)
  double mi_raw = 0.0;
  double h_y = 0.0;         // entropy estimate of the latent fibers
  int clusters = 0;
  int samples = 0;
};

/// I(Y_j; labels) = H(Y_j) - sum_f p(f) H(Y_j | f). The kde estimator uses
/// a Gaussian-mixture pairwise-distance bound with a Silverman bandwidth
/// pooled over all fibers; discrete_plugin rounds fibers to the integer
/// grid and uses plug-in entropies. Requires at least 10*K fibers.
MIReport estimate_mi(const std::vector<std::vector<double>>& latent_fibers, const std::vector<int>& labels,
                     int k, MiEstimator estimator);

/// Eq-8-style share: base-layer percentage of the latent rate.
double base_share_percent(const entropy::RateReport& report);
/// Layer + hyper percentages of the grand total; sums to 100.
std::vector<double> entropy_shares(const entropy::RateReport& report);

/// Full measurement on a trained model: quantizes each sample, runs the
/// base-task LST, clusters its output feature fibers (K clusters), and
/// estimates MI against every layer's latent fibers. Fiber count is
/// capped at 50k by seeded subsampling.
std::vector<MIReport> measure_model_mi(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                                       const std::vector<data::Sample>& samples, int k_clusters,
                                       std::uint64_t seed, MiEstimator estimator);

struct DpiReport {
  double i_y_xhat = 0.0;
  double i_y_f = 0.0;
  double i_y_t = 0.0;
  bool holds = false;
};

/// Exact plug-in mutual information along the chain
/// X -> Yhat -> Xhat -> F -> T, given deterministic stage maps from X.
DpiReport dpi_probe(const rdt::DiscreteSource& source, const std::vector<int>& yhat_map,
                    const std::vector<int>& xhat_map, const std::vector<int>& f_map,
                    const std::vector<int>& t_map);

}  // namespace lsc::info
