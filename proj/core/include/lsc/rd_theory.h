#pragma once

#include <cstdint>
#include <vector>

#include "lsc/nn.h"
#include "lsc/tensor.h"

namespace lsc::rdt {

constexpr int kMaxAlphabet = 64;

struct DiscreteSource {
  std::vector<double> pmf;

  int alphabet_size() const { return static_cast<int>(pmf.size()); }
  void validate() const;
  double entropy_bits() const;
  static DiscreteSource uniform(int n);
  static DiscreteSource random(int n, nn::Rng& rng);
};

/// Deterministic feedforward network on a finite alphabet: a list of
/// per-layer lookup tables from the input symbol, a collapsed map g to
/// the joint layer-output alphabet, and a head h from that alphabet to
/// the task output. f = h o g by construction.
struct DiscreteNetwork {
  std::vector<std::vector<int>> layer_maps;  // each of size |X|
  std::vector<int> g_map;                    // |X| -> y index (dense, order of first appearance)
  std::vector<int> h_map;                    // y index -> t symbol
  int y_alphabet = 0;
  int t_alphabet = 0;

  int f(int x) const { return h_map[g_map[x]]; }
  bool g_injective_on_support(const DiscreteSource& src) const;
  static DiscreteNetwork random(int input_alphabet, int num_layers, int layer_alphabet, int t_alphabet,
                                nn::Rng& rng);
  void validate(int input_alphabet) const;
};

/// Exact H(Y^(l1), ..., Y^(lk)) by pushing the source pmf through the
/// selected layer maps. Empty subset selects all layers.
double exact_joint_entropy(const DiscreteSource& src, const DiscreteNetwork& net,
                           const std::vector<int>& layer_subset = {});

enum class BaseMetric { hamming, squared };
double base_distortion(BaseMetric metric, int t1, int t2);

/// D[x][xhat] = d(f(x), f(xhat)) on the input alphabet.
std::vector<std::vector<double>> output_distortion_matrix_x(const DiscreteNetwork& net, BaseMetric metric);
/// D[y][yhat] = d(h(y), h(yhat)) on the induced layer alphabet.
std::vector<std::vector<double>> output_distortion_matrix_y(const DiscreteNetwork& net, BaseMetric metric);

struct BaResult {
  double distortion = 0.0;
  double rate_bits = 0.0;
  std::vector<std::vector<double>> conditional;  // q(xhat | x)
  int iterations = 0;
  bool converged = false;
  double max_rate_increase = 0.0;  // across iterations; descent check
};

/// Blahut-Arimoto at a fixed slope: alternating updates of the
/// reproduction marginal and the conditional until the rate change drops
/// below tol.
BaResult blahut_arimoto(const std::vector<double>& pmf, const std::vector<std::vector<double>>& distortion,
                        double slope, double tol = 1e-9, int max_iter = 5000);

/// Max distortion that still requires positive rate: the best single
/// reproduction symbol's expected distortion.
double zero_rate_distortion(const std::vector<double>& pmf,
                            const std::vector<std::vector<double>>& distortion);

/// R(D) at a target distortion via slope bisection on the BA curve
/// (chord-interpolated across slope jumps).
double rate_at_distortion(const std::vector<double>& pmf,
                          const std::vector<std::vector<double>>& distortion, double target_d,
                          double tol = 1e-9);

struct Theorem2Point {
  double d = 0.0;
  double r_x = 0.0;
  double r_y = 0.0;
};

struct Theorem2Report {
  std::vector<Theorem2Point> points;
  int violations = 0;        // r_y > r_x + eps
  double max_gap = 0.0;      // max(r_y - r_x) over the grid
  double induced_distortion_diff = 0.0;  // |E d(h,h~) - E d(f,f^)| for the induced quantizer
};

/// Verifies R_Y(D) <= R_X(D) + eps across a distortion grid, plus the
/// induced-quantizer distortion identity.
Theorem2Report theorem2_check(const DiscreteSource& src, const DiscreteNetwork& net,
                              const std::vector<double>& d_grid, BaseMetric metric = BaseMetric::hamming,
                              double eps = 1e-6);

std::vector<double> default_d_grid(const DiscreteSource& src, const DiscreteNetwork& net, int points,
                                   BaseMetric metric = BaseMetric::hamming);

double binary_entropy(double p);

}  // namespace lsc::rdt
