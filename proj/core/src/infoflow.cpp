#include "lsc/infoflow.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace lsc::info {

namespace {
constexpr double kLn2 = 0.6931471805599453;
constexpr std::size_t kMaxFibers = 50000;

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double silverman_bandwidth(const std::vector<std::vector<double>>& fibers) {
  const std::size_t n = fibers.size();
  const std::size_t d = fibers[0].size();
  double var_sum = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (const auto& f : fibers) mean += f[k];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& f : fibers) var += (f[k] - mean) * (f[k] - mean);
    var_sum += var / static_cast<double>(n);
  }
  const double sigma_bar = std::sqrt(var_sum / static_cast<double>(d));
  const double dd = static_cast<double>(d);
  return sigma_bar * std::pow(4.0 / ((dd + 2.0) * static_cast<double>(n)), 1.0 / (dd + 4.0));
}

/// Gaussian-mixture entropy upper bound from pairwise distances, in bits.
double kde_entropy_bits(const std::vector<std::vector<double>>& fibers, const std::vector<int>& subset,
                        double sigma) {
  const std::size_t n = subset.size();
  if (n == 0) return 0.0;
  const double d = static_cast<double>(fibers[0].size());
  if (sigma <= 0.0) return 0.0;  // degenerate: identical fibers carry no spread
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double acc = 0.0;
  std::vector<double> expo(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      expo[j] = -sq_dist(fibers[subset[i]], fibers[subset[j]]) * inv2s2;
      mx = std::max(mx, expo[j]);
    }
    double se = 0.0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(expo[j] - mx);
    acc += mx + std::log(se) - std::log(static_cast<double>(n));
  }
  const double cross = -acc / static_cast<double>(n);
  const double per_comp = 0.5 * d * std::log(2.0 * M_PI * M_E * sigma * sigma);
  return (cross + per_comp) / kLn2;
}

double plugin_entropy_bits(const std::vector<std::vector<double>>& fibers, const std::vector<int>& subset) {
  std::map<std::vector<long long>, int> counts;
  for (int idx : subset) {
    std::vector<long long> key;
    key.reserve(fibers[idx].size());
    for (double v : fibers[idx]) key.push_back(std::llround(v));
    counts[key]++;
  }
  const double n = static_cast<double>(subset.size());
  double h = 0.0;
  for (const auto& [key, c] : counts) {
    const double p = c / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

FiberSet extract_fibers(const Tensor& yhat_j, const Tensor& features, int upscale) {
  LSC_CHECK(upscale >= 1, invalid_argument, "upscale must be >= 1");
  LSC_CHECK(features.h() == yhat_j.h() * upscale && features.w() == yhat_j.w() * upscale, shape_mismatch,
            "feature tensor does not spatially cover the latent at the given upscale");
  FiberSet fs;
  for (int y = 0; y < yhat_j.h(); ++y) {
    for (int x = 0; x < yhat_j.w(); ++x) {
      std::vector<double> lf(yhat_j.row(y, x), yhat_j.row(y, x) + yhat_j.c());
      fs.latent_fibers.push_back(std::move(lf));
      std::vector<double> ff;
      ff.reserve(static_cast<std::size_t>(upscale) * upscale * features.c());
      for (int dy = 0; dy < upscale; ++dy)
        for (int dx = 0; dx < upscale; ++dx) {
          const double* row = features.row(y * upscale + dy, x * upscale + dx);
          ff.insert(ff.end(), row, row + features.c());
        }
      fs.feature_fibers.push_back(std::move(ff));
    }
  }
  return fs;
}

ClusterResult cluster_features(const std::vector<std::vector<double>>& fibers, int k, std::uint64_t seed) {
  LSC_CHECK(k >= 1, invalid_argument, "k must be >= 1");
  LSC_CHECK(static_cast<int>(fibers.size()) >= k, insufficient_data, "need at least k fibers to cluster");
  const std::size_t n = fibers.size();

  ClusterResult res;
  res.k = k;
  res.labels.assign(n, 0);

  bool all_same = true;
  for (std::size_t i = 1; i < n && all_same; ++i) all_same = sq_dist(fibers[i], fibers[0]) == 0.0;
  if (all_same || k == 1) {
    res.degenerate = all_same && k > 1;
    return res;
  }

  nn::Rng rng(seed);
  std::vector<std::vector<double>> centers;
  centers.push_back(fibers[rng.u64_below(n)]);
  std::vector<double> dist2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(fibers[i], c));
      dist2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(fibers[rng.u64_below(n)]);
      continue;
    }
    double pick = rng.uniform(0.0, total);
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      pick -= dist2[i];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(fibers[chosen]);
  }

  for (int iter = 0; iter < 60; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(fibers[i], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(fibers[i], centers[c]);
        if (d < bd) {  // ties keep the lowest index
          bd = d;
          best = c;
        }
      }
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
    }
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                          std::vector<double>(fibers[0].size(), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[res.labels[i]]++;
      for (std::size_t d = 0; d < fibers[i].size(); ++d) sums[res.labels[i]][d] += fibers[i][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // reseed an empty cluster on the point farthest from its center
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(fibers[i], centers[res.labels[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        centers[c] = fibers[far_i];
        changed = true;
        continue;
      }
      for (std::size_t d = 0; d < sums[c].size(); ++d)
        centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  return res;
}

MIReport estimate_mi(const std::vector<std::vector<double>>& latent_fibers, const std::vector<int>& labels,
                     int k, MiEstimator estimator) {
  LSC_CHECK(latent_fibers.size() == labels.size(), shape_mismatch, "labels must align with fibers");
  LSC_CHECK(static_cast<int>(latent_fibers.size()) >= 10 * k, insufficient_data,
            "need at least 10*K fibers for an MI estimate");
  const std::size_t n = latent_fibers.size();

  std::vector<int> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    LSC_CHECK(labels[i] >= 0 && labels[i] < k, invalid_argument, "label out of range");
    groups[labels[i]].push_back(static_cast<int>(i));
  }

  MIReport rep;
  rep.clusters = k;
  rep.samples = static_cast<int>(n);
  double h_cond = 0.0;
  if (estimator == MiEstimator::kde) {
    const double sigma = silverman_bandwidth(latent_fibers);
    rep.h_y = kde_entropy_bits(latent_fibers, all, sigma);
    for (const auto& g : groups) {
      if (g.empty()) continue;
      const double p = static_cast<double>(g.size()) / static_cast<double>(n);
      h_cond += p * kde_entropy_bits(latent_fibers, g, sigma);
    }
  } else {
    rep.h_y = plugin_entropy_bits(latent_fibers, all);
    for (const auto& g : groups) {
      if (g.empty()) continue;
      const double p = static_cast<double>(g.size()) / static_cast<double>(n);
      h_cond += p * plugin_entropy_bits(latent_fibers, g);
    }
  }
  rep.mi_raw = rep.h_y - h_cond;
  rep.mi_clamped = std::max(0.0, rep.mi_raw);
  return rep;
}

double base_share_percent(const entropy::RateReport& report) { return 100.0 * report.base_latent_share(); }

std::vector<double> entropy_shares(const entropy::RateReport& report) { return report.shares_of_total(); }

std::vector<MIReport> measure_model_mi(model::ScalableModel& model, const tasks::BackendRegistry& registry,
                                       const std::vector<data::Sample>& samples, int k_clusters,
                                       std::uint64_t seed, MiEstimator estimator) {
  (void)registry;
  const auto& spec = model.layers();
  int base_task_layer = -1;
  for (int j = 0; j < spec.num_layers(); ++j) {
    if (model.has_lst(j)) {
      base_task_layer = j;
      break;
    }
  }
  LSC_CHECK(base_task_layer >= 0, not_found, "model has no task-bound layer");
  const int upscale = model.lst(base_task_layer).config().total_upscale();

  std::vector<std::vector<std::vector<double>>> latent_fibers(
      static_cast<std::size_t>(spec.num_layers()));
  std::vector<std::vector<double>> feature_fibers;

  for (const auto& sample : samples) {
    codec::Image img = codec::make_image(sample.image);
    Tensor y = codec::analysis_encode(img, model.transform());
    const int n = y.h(), m = y.w();
    Tensor z = model.entropy().hyper_analysis_eval(y);
    Tensor zhat = codec::quantize(z, Tensor(z.dims(), 0.0), codec::QuantMode::eval);
    Tensor h_full = model.entropy().hyper_synthesis_eval(zhat, n, m);

    std::vector<Tensor> yhat_layers;
    for (int j = 0; j < spec.num_layers(); ++j) {
      Tensor yj = Tensor::hwc(n, m, spec.channel_counts[j]);
      const int off = spec.layer_offset(j);
      for (int yy = 0; yy < n; ++yy)
        for (int xx = 0; xx < m; ++xx)
          for (int c = 0; c < spec.channel_counts[j]; ++c) yj.at(yy, xx, c) = y.at(yy, xx, off + c);
      yhat_layers.push_back(entropy::autoregressive_quantize(yj, model.entropy(), h_full, j).yhat);
    }

    Tensor prefix = Tensor::hwc(n, m, spec.prefix_channels(base_task_layer + 1));
    int off = 0;
    for (int j = 0; j <= base_task_layer; ++j) {
      for (int yy = 0; yy < n; ++yy)
        for (int xx = 0; xx < m; ++xx)
          for (int c = 0; c < yhat_layers[j].c(); ++c)
            prefix.at(yy, xx, off + c) = yhat_layers[j].at(yy, xx, c);
      off += yhat_layers[j].c();
    }
    nn::Tape t;
    Tensor f_est = t.value(model.lst(base_task_layer).forward(t, t.constant(prefix)));

    for (int j = 0; j < spec.num_layers(); ++j) {
      FiberSet fs = extract_fibers(yhat_layers[j], f_est, upscale);
      for (auto& lf : fs.latent_fibers) latent_fibers[j].push_back(std::move(lf));
      if (j == 0)
        for (auto& ff : fs.feature_fibers) feature_fibers.push_back(std::move(ff));
    }
  }

  // Cap the measurement size with a seeded subsample (paired across layers).
  if (feature_fibers.size() > kMaxFibers) {
    std::vector<std::size_t> idx(feature_fibers.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    nn::Rng rng(nn::derive_seed(seed, 0x5b5));
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(kMaxFibers);
    std::sort(idx.begin(), idx.end());
    auto take = [&idx](std::vector<std::vector<double>>& v) {
      std::vector<std::vector<double>> out;
      out.reserve(idx.size());
      for (std::size_t i : idx) out.push_back(std::move(v[i]));
      v = std::move(out);
    };
    take(feature_fibers);
    for (auto& lf : latent_fibers) take(lf);
  }

  ClusterResult clusters = cluster_features(feature_fibers, k_clusters, seed);
  std::vector<MIReport> out;
  for (int j = 0; j < spec.num_layers(); ++j)
    out.push_back(estimate_mi(latent_fibers[j], clusters.labels, k_clusters, estimator));
  return out;
}

namespace {
double mi_exact(const std::vector<double>& pmf, const std::vector<int>& a_of_x,
                const std::vector<int>& b_of_x) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  for (std::size_t x = 0; x < pmf.size(); ++x) {
    if (pmf[x] <= 0.0) continue;
    joint[{a_of_x[x], b_of_x[x]}] += pmf[x];
    pa[a_of_x[x]] += pmf[x];
    pb[b_of_x[x]] += pmf[x];
  }
  double mi = 0.0;
  for (const auto& [ab, p] : joint) mi += p * std::log2(p / (pa[ab.first] * pb[ab.second]));
  return mi;
}
}  // namespace

DpiReport dpi_probe(const rdt::DiscreteSource& source, const std::vector<int>& yhat_map,
                    const std::vector<int>& xhat_map, const std::vector<int>& f_map,
                    const std::vector<int>& t_map) {
  source.validate();
  const int nx = source.alphabet_size();
  LSC_CHECK(static_cast<int>(yhat_map.size()) == nx, invalid_argument, "yhat map must cover the source");
  // Stage maps chain: each indexes the previous stage's symbol.
  std::vector<int> yv(nx), xv(nx), fv(nx), tv(nx);
  for (int x = 0; x < nx; ++x) {
    yv[x] = yhat_map[x];
    LSC_CHECK(yv[x] >= 0 && yv[x] < static_cast<int>(xhat_map.size()), invalid_argument,
              "xhat map too small for yhat symbol");
    xv[x] = xhat_map[yv[x]];
    LSC_CHECK(xv[x] >= 0 && xv[x] < static_cast<int>(f_map.size()), invalid_argument,
              "f map too small for xhat symbol");
    fv[x] = f_map[xv[x]];
    LSC_CHECK(fv[x] >= 0 && fv[x] < static_cast<int>(t_map.size()), invalid_argument,
              "t map too small for f symbol");
    tv[x] = t_map[fv[x]];
  }
  DpiReport rep;
  rep.i_y_xhat = mi_exact(source.pmf, yv, xv);
  rep.i_y_f = mi_exact(source.pmf, yv, fv);
  rep.i_y_t = mi_exact(source.pmf, yv, tv);
  rep.holds = rep.i_y_xhat >= rep.i_y_f - 1e-12 && rep.i_y_f >= rep.i_y_t - 1e-12;
  return rep;
}

}  // namespace lsc::info
