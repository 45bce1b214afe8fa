#include "lsc/rd_theory.h"

#include <algorithm>
#include <cmath>
#include <map>

namespace lsc::rdt {

namespace {
constexpr double kLog2 = 0.6931471805599453;
double log2d(double x) { return std::log(x) / kLog2; }
}  // namespace

void DiscreteSource::validate() const {
  LSC_CHECK(!pmf.empty() && static_cast<int>(pmf.size()) <= kMaxAlphabet, invalid_argument,
            "source alphabet must have 1.." + std::to_string(kMaxAlphabet) + " symbols");
  double s = 0.0;
  for (double p : pmf) {
    LSC_CHECK(p >= 0.0, invalid_argument, "negative probability");
    s += p;
  }
  LSC_CHECK(std::abs(s - 1.0) <= 1e-12, invalid_argument, "pmf must sum to 1");
}

double DiscreteSource::entropy_bits() const {
  double h = 0.0;
  for (double p : pmf)
    if (p > 0.0) h -= p * log2d(p);
  return h;
}

DiscreteSource DiscreteSource::uniform(int n) {
  DiscreteSource s;
  s.pmf.assign(static_cast<std::size_t>(n), 1.0 / n);
  return s;
}

DiscreteSource DiscreteSource::random(int n, nn::Rng& rng) {
  DiscreteSource s;
  s.pmf.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (double& p : s.pmf) {
    p = -std::log(rng.uniform(1e-12, 1.0));  // exponential weights -> Dirichlet(1)
    total += p;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < s.pmf.size(); ++i) {
    s.pmf[i] /= total;
    acc += s.pmf[i];
  }
  s.pmf.back() = 1.0 - acc;  // exact closure
  return s;
}

bool DiscreteNetwork::g_injective_on_support(const DiscreteSource& src) const {
  std::map<int, int> seen;  // y index -> x
  for (int x = 0; x < static_cast<int>(g_map.size()); ++x) {
    if (src.pmf[x] <= 0.0) continue;
    auto [it, inserted] = seen.emplace(g_map[x], x);
    if (!inserted) return false;
  }
  return true;
}

DiscreteNetwork DiscreteNetwork::random(int input_alphabet, int num_layers, int layer_alphabet,
                                        int t_alphabet, nn::Rng& rng) {
  LSC_CHECK(input_alphabet >= 1 && input_alphabet <= kMaxAlphabet, invalid_argument,
            "input alphabet out of range");
  DiscreteNetwork net;
  for (int l = 0; l < num_layers; ++l) {
    std::vector<int> m(static_cast<std::size_t>(input_alphabet));
    for (int& v : m) v = static_cast<int>(rng.u64_below(layer_alphabet));
    net.layer_maps.push_back(std::move(m));
  }
  // Collapse tuples to dense indices in order of first appearance.
  std::map<std::vector<int>, int> index;
  net.g_map.resize(static_cast<std::size_t>(input_alphabet));
  for (int x = 0; x < input_alphabet; ++x) {
    std::vector<int> tuple;
    for (const auto& m : net.layer_maps) tuple.push_back(m[x]);
    auto [it, inserted] = index.emplace(tuple, static_cast<int>(index.size()));
    net.g_map[x] = it->second;
  }
  net.y_alphabet = static_cast<int>(index.size());
  net.t_alphabet = t_alphabet;
  net.h_map.resize(static_cast<std::size_t>(net.y_alphabet));
  for (int& v : net.h_map) v = static_cast<int>(rng.u64_below(t_alphabet));
  net.validate(input_alphabet);
  return net;
}

void DiscreteNetwork::validate(int input_alphabet) const {
  LSC_CHECK(static_cast<int>(g_map.size()) == input_alphabet, invalid_argument, "g map size mismatch");
  for (int y : g_map) LSC_CHECK(y >= 0 && y < y_alphabet, invalid_argument, "g map out of range");
  LSC_CHECK(static_cast<int>(h_map.size()) == y_alphabet, invalid_argument, "h map size mismatch");
  for (int t : h_map) LSC_CHECK(t >= 0 && t < t_alphabet, invalid_argument, "h map out of range");
  // f(x) = h(g(x)) holds by construction; verify totality anyway.
  for (int x = 0; x < input_alphabet; ++x) (void)f(x);
}

double exact_joint_entropy(const DiscreteSource& src, const DiscreteNetwork& net,
                           const std::vector<int>& layer_subset) {
  src.validate();
  LSC_CHECK(!net.layer_maps.empty(), invalid_argument, "network has no layers");
  std::vector<int> layers = layer_subset;
  if (layers.empty())
    for (int l = 0; l < static_cast<int>(net.layer_maps.size()); ++l) layers.push_back(l);
  std::map<std::vector<int>, double> mass;
  for (int x = 0; x < src.alphabet_size(); ++x) {
    if (src.pmf[x] <= 0.0) continue;
    std::vector<int> tuple;
    for (int l : layers) {
      LSC_CHECK(l >= 0 && l < static_cast<int>(net.layer_maps.size()), invalid_argument,
                "layer index out of range");
      tuple.push_back(net.layer_maps[l][x]);
    }
    mass[tuple] += src.pmf[x];
  }
  double h = 0.0;
  for (const auto& [tuple, p] : mass)
    if (p > 0.0) h -= p * log2d(p);
  return h;
}

double base_distortion(BaseMetric metric, int t1, int t2) {
  if (metric == BaseMetric::hamming) return t1 == t2 ? 0.0 : 1.0;
  const double d = static_cast<double>(t1 - t2);
  return d * d;
}

std::vector<std::vector<double>> output_distortion_matrix_x(const DiscreteNetwork& net, BaseMetric metric) {
  const int n = static_cast<int>(net.g_map.size());
  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (int x = 0; x < n; ++x)
    for (int xh = 0; xh < n; ++xh) d[x][xh] = base_distortion(metric, net.f(x), net.f(xh));
  return d;
}

std::vector<std::vector<double>> output_distortion_matrix_y(const DiscreteNetwork& net, BaseMetric metric) {
  const int n = net.y_alphabet;
  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (int y = 0; y < n; ++y)
    for (int yh = 0; yh < n; ++yh) d[y][yh] = base_distortion(metric, net.h_map[y], net.h_map[yh]);
  return d;
}

BaResult blahut_arimoto(const std::vector<double>& pmf, const std::vector<std::vector<double>>& distortion,
                        double slope, double tol, int max_iter) {
  const int nx = static_cast<int>(pmf.size());
  LSC_CHECK(nx >= 1 && static_cast<int>(distortion.size()) == nx, invalid_argument,
            "distortion matrix must be |X| x |Xhat|");
  const int nr = static_cast<int>(distortion[0].size());
  for (const auto& row : distortion) {
    LSC_CHECK(static_cast<int>(row.size()) == nr, invalid_argument, "ragged distortion matrix");
    for (double v : row) LSC_CHECK(std::isfinite(v) && v >= 0.0, invalid_argument, "invalid distortion");
  }
  LSC_CHECK(slope >= 0.0, invalid_argument, "slope must be nonnegative");

  std::vector<double> marginal(static_cast<std::size_t>(nr), 1.0 / nr);
  std::vector<std::vector<double>> cond(static_cast<std::size_t>(nx),
                                        std::vector<double>(static_cast<std::size_t>(nr), 0.0));
  BaResult res;
  double prev_rate = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    // conditional update, row-stabilized
    for (int x = 0; x < nx; ++x) {
      double dmin = distortion[x][0];
      for (int r = 1; r < nr; ++r) dmin = std::min(dmin, distortion[x][r]);
      double z = 0.0;
      for (int r = 0; r < nr; ++r) {
        const double w = marginal[r] * std::exp(-slope * (distortion[x][r] - dmin));
        cond[x][r] = w;
        z += w;
      }
      LSC_CHECK(z > 0.0, numeric, "degenerate conditional row");
      for (int r = 0; r < nr; ++r) cond[x][r] /= z;
    }
    // marginal update
    std::vector<double> next(static_cast<std::size_t>(nr), 0.0);
    for (int x = 0; x < nx; ++x)
      for (int r = 0; r < nr; ++r) next[r] += pmf[x] * cond[x][r];
    marginal = std::move(next);

    double rate = 0.0, dist = 0.0;
    for (int x = 0; x < nx; ++x) {
      for (int r = 0; r < nr; ++r) {
        const double q = cond[x][r];
        if (q <= 0.0 || pmf[x] <= 0.0 || marginal[r] <= 0.0) continue;
        rate += pmf[x] * q * log2d(q / marginal[r]);
        dist += pmf[x] * q * distortion[x][r];
      }
    }
    res.iterations = it + 1;
    res.distortion = dist;
    res.rate_bits = std::max(0.0, rate);
    if (prev_rate >= 0.0) {
      res.max_rate_increase = std::max(res.max_rate_increase, rate - prev_rate);
      if (std::abs(rate - prev_rate) < tol) {
        res.converged = true;
        break;
      }
    }
    prev_rate = rate;
  }
  res.conditional = cond;
  return res;
}

double zero_rate_distortion(const std::vector<double>& pmf,
                            const std::vector<std::vector<double>>& distortion) {
  const int nr = static_cast<int>(distortion[0].size());
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < nr; ++r) {
    double d = 0.0;
    for (std::size_t x = 0; x < pmf.size(); ++x) d += pmf[x] * distortion[x][r];
    best = std::min(best, d);
  }
  return best;
}

double rate_at_distortion(const std::vector<double>& pmf,
                          const std::vector<std::vector<double>>& distortion, double target_d, double tol) {
  const double d0 = zero_rate_distortion(pmf, distortion);
  if (target_d >= d0) return 0.0;
  LSC_CHECK(target_d > 0.0, invalid_argument, "target distortion must be positive");

  double lo = 0.0;           // D(lo) = d0 >= target
  double hi = 1.0;
  BaResult at_hi = blahut_arimoto(pmf, distortion, hi, tol);
  int guard = 0;
  while (at_hi.distortion > target_d) {
    hi *= 4.0;
    LSC_CHECK(++guard < 40, numeric, "slope search diverged");
    at_hi = blahut_arimoto(pmf, distortion, hi, tol);
  }
  BaResult at_lo = blahut_arimoto(pmf, distortion, lo, tol);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    BaResult r = blahut_arimoto(pmf, distortion, mid, tol);
    if (r.distortion > target_d) {
      lo = mid;
      at_lo = r;
    } else {
      hi = mid;
      at_hi = r;
    }
    if (std::abs(at_lo.distortion - at_hi.distortion) < 1e-12 || hi - lo < 1e-13 * std::max(1.0, hi)) break;
  }
  // Chord across the remaining bracket handles slope jumps (time-shared
  // segments of the curve).
  const double dl = at_lo.distortion, dh = at_hi.distortion;
  if (std::abs(dl - dh) < 1e-15) return at_hi.rate_bits;
  const double w = std::clamp((dl - target_d) / (dl - dh), 0.0, 1.0);
  return at_lo.rate_bits + w * (at_hi.rate_bits - at_lo.rate_bits);
}

std::vector<double> default_d_grid(const DiscreteSource& src, const DiscreteNetwork& net, int points,
                                   BaseMetric metric) {
  auto dx = output_distortion_matrix_x(net, metric);
  const double dmax = zero_rate_distortion(src.pmf, dx);
  std::vector<double> grid;
  for (int i = 1; i <= points; ++i) grid.push_back(dmax * static_cast<double>(i) / points);
  return grid;
}

Theorem2Report theorem2_check(const DiscreteSource& src, const DiscreteNetwork& net,
                              const std::vector<double>& d_grid, BaseMetric metric, double eps) {
  src.validate();
  auto dx = output_distortion_matrix_x(net, metric);
  auto dy = output_distortion_matrix_y(net, metric);

  // Induced source on the layer alphabet.
  std::vector<double> qy(static_cast<std::size_t>(net.y_alphabet), 0.0);
  for (int x = 0; x < src.alphabet_size(); ++x) qy[net.g_map[x]] += src.pmf[x];

  Theorem2Report rep;
  for (double d : d_grid) {
    Theorem2Point pt;
    pt.d = d;
    pt.r_x = rate_at_distortion(src.pmf, dx, d);
    pt.r_y = rate_at_distortion(qy, dy, d);
    rep.max_gap = std::max(rep.max_gap, pt.r_y - pt.r_x);
    if (pt.r_y > pt.r_x + eps) ++rep.violations;
    rep.points.push_back(pt);
  }

  // Induced-quantizer construction at a mid-grid slope: q(y~|y) built from
  // p*(xhat|x) must achieve exactly the same expected output distortion.
  {
    BaResult ba = blahut_arimoto(src.pmf, dx, 4.0);
    double ed_x = 0.0;
    for (int x = 0; x < src.alphabet_size(); ++x)
      for (int xh = 0; xh < src.alphabet_size(); ++xh)
        ed_x += src.pmf[x] * ba.conditional[x][xh] * dx[x][xh];

    std::vector<std::vector<double>> qcond(static_cast<std::size_t>(net.y_alphabet),
                                           std::vector<double>(static_cast<std::size_t>(net.y_alphabet), 0.0));
    for (int x = 0; x < src.alphabet_size(); ++x) {
      if (src.pmf[x] <= 0.0) continue;
      const int y = net.g_map[x];
      for (int xh = 0; xh < src.alphabet_size(); ++xh)
        qcond[y][net.g_map[xh]] += src.pmf[x] / qy[y] * ba.conditional[x][xh];
    }
    double ed_y = 0.0;
    for (int y = 0; y < net.y_alphabet; ++y) {
      if (qy[y] <= 0.0) continue;
      for (int yh = 0; yh < net.y_alphabet; ++yh) ed_y += qy[y] * qcond[y][yh] * dy[y][yh];
    }
    rep.induced_distortion_diff = std::abs(ed_x - ed_y);
  }
  return rep;
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * log2d(p) - (1.0 - p) * log2d(1.0 - p);
}

}  // namespace lsc::rdt
