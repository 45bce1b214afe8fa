#include "lsc/evalkit.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lsc/svgplot.h"

namespace lsc::evalkit {

double mse(const Tensor& a, const Tensor& b) {
  LSC_CHECK(a.same_shape(b), shape_mismatch, "mse: shape mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double e = mse(a, b);
  if (e <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigmaW = 1.5;
constexpr double kK1 = 0.01, kK2 = 0.03;
const double kMsWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    k[i] = std::exp(-d * d / (2.0 * kSigmaW * kSigmaW));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// single-channel plane helpers
struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel_plane(const Tensor& t, int c) {
  Plane p;
  p.h = t.h();
  p.w = t.w();
  p.v.resize(static_cast<std::size_t>(p.h) * p.w);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) p.at(y, x) = t.at(y, x, c);
  return p;
}

// separable valid-region Gaussian filter
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size());
  Plane tmp;  // horizontal pass
  tmp.h = in.h;
  tmp.w = in.w - r + 1;
  tmp.v.resize(static_cast<std::size_t>(tmp.h) * tmp.w);
  for (int y = 0; y < tmp.h; ++y)
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += in.at(y, x + i) * k[i];
      tmp.at(y, x) = s;
    }
  Plane out;
  out.h = in.h - r + 1;
  out.w = tmp.w;
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += tmp.at(y + i, x) * k[i];
      out.at(y, x) = s;
    }
  return out;
}

Plane downsample2(const Plane& in) {
  Plane out;
  out.h = in.h / 2;
  out.w = in.w / 2;
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.at(y, x) =
          0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x) +
                  in.at(2 * y + 1, 2 * x + 1));
  return out;
}

// mean luminance-comparison and contrast-structure terms at one scale
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, const std::vector<double>& k) {
  const double c1 = kK1 * kK1, c2 = kK2 * kK2;
  Plane mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  Plane a2 = a, b2 = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    a2.v[i] = a.v[i] * a.v[i];
    b2.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  Plane saa = filter_valid(a2, k), sbb = filter_valid(b2, k), sab = filter_valid(ab, k);
  double lum = 0.0, cs = 0.0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = saa.v[i] - ma * ma;
    const double vb = sbb.v[i] - mb * mb;
    const double cov = sab.v[i] - ma * mb;
    lum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cs += (2.0 * cov + c2) / (va + vb + c2);
  }
  return {lum / n, cs / n};
}

double ms_ssim_channel(Plane a, Plane b) {
  const auto k = gaussian_kernel();
  double result = 1.0;
  double lum_last = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    LSC_CHECK(a.h >= kWin && a.w >= kWin, invalid_argument,
              "image too small for 5-scale MS-SSIM (min dim 176)");
    auto [lum, cs] = ssim_terms(a, b, k);
    result *= std::pow(std::max(cs, 1e-12), kMsWeights[scale]);
    lum_last = lum;
    if (scale < 4) {
      a = downsample2(a);
      b = downsample2(b);
    }
  }
  return result * std::pow(std::max(lum_last, 1e-12), kMsWeights[4]);
}

}  // namespace

double ms_ssim(const Tensor& a, const Tensor& b) {
  LSC_CHECK(a.same_shape(b), shape_mismatch, "ms_ssim: shape mismatch");
  LSC_CHECK(std::min(a.h(), a.w()) >= 176, invalid_argument,
            "5-scale MS-SSIM needs min dim >= 176, got " + a.shape_str());
  double s = 0.0;
  for (int c = 0; c < a.c(); ++c) s += ms_ssim_channel(channel_plane(a, c), channel_plane(b, c));
  return s / a.c();
}

// ---------------------------------------------------------------------------
// PCHIP + Bjontegaard deltas
// ---------------------------------------------------------------------------

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  LSC_CHECK(n >= 2 && y_.size() == n, invalid_argument, "pchip needs >= 2 points");
  for (std::size_t i = 1; i < n; ++i)
    LSC_CHECK(x_[i] > x_[i - 1], invalid_argument, "pchip abscissae must be strictly increasing");
  std::vector<double> d(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
  m_.assign(n, 0.0);
  m_[0] = d[0];
  m_[n - 1] = d[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (d[i - 1] * d[i] <= 0.0) {
      m_[i] = 0.0;
    } else {
      const double w1 = 2.0 * (x_[i + 1] - x_[i]) + (x_[i] - x_[i - 1]);
      const double w2 = (x_[i + 1] - x_[i]) + 2.0 * (x_[i] - x_[i - 1]);
      m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
    }
  }
  // endpoint slope limiting (Fritsch-Carlson)
  auto limit_end = [&](std::size_t i, double di) {
    if (m_[i] * di <= 0.0)
      m_[i] = 0.0;
    else if (std::abs(m_[i]) > 3.0 * std::abs(di))
      m_[i] = 3.0 * di;
  };
  limit_end(0, d[0]);
  limit_end(n - 1, d[n - 2]);
}

double Pchip::eval(double x) const {
  const std::size_t n = x_.size();
  std::size_t i = 0;
  if (x <= x_[0])
    i = 0;
  else if (x >= x_[n - 2])
    i = n - 2;
  else
    i = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
  const double h = x_[i + 1] - x_[i];
  const double t = (x - x_[i]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return y_[i] * (2 * t3 - 3 * t2 + 1) + m_[i] * h * (t3 - 2 * t2 + t) + y_[i + 1] * (-2 * t3 + 3 * t2) +
         m_[i + 1] * h * (t3 - t2);
}

double Pchip::integral(double lo, double hi) const {
  LSC_CHECK(hi >= lo, invalid_argument, "bad integral bounds");
  const std::size_t n = x_.size();
  LSC_CHECK(lo >= x_[0] - 1e-12 && hi <= x_[n - 1] + 1e-12, invalid_argument,
            "integral bounds outside the fit range");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = std::max(lo, x_[i]);
    const double b = std::min(hi, x_[i + 1]);
    if (b <= a) continue;
    const double h = x_[i + 1] - x_[i];
    // exact cubic Hermite integral on [ta, tb] in normalized coordinates
    auto anti = [&](double t) {
      const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
      return h * (y_[i] * (0.5 * t4 - t3 + t) + m_[i] * h * (0.25 * t4 - (2.0 / 3.0) * t3 + 0.5 * t2) +
                  y_[i + 1] * (-0.5 * t4 + t3) + m_[i + 1] * h * (0.25 * t4 - t3 / 3.0));
    };
    acc += anti((b - x_[i]) / h) - anti((a - x_[i]) / h);
  }
  return acc;
}

namespace {
Pchip fit_lograte_vs_metric(std::vector<RatePoint> pts) {
  LSC_CHECK(pts.size() >= 4, invalid_argument, "bd metrics need at least 4 rate points");
  std::sort(pts.begin(), pts.end(), [](const RatePoint& a, const RatePoint& b) { return a.metric < b.metric; });
  std::vector<double> x, y;
  for (const auto& p : pts) {
    LSC_CHECK(p.bpp > 0.0, invalid_argument, "rate points must have positive bpp");
    x.push_back(p.metric);
    y.push_back(std::log10(p.bpp));
  }
  return Pchip(std::move(x), std::move(y));
}

Pchip fit_metric_vs_lograte(std::vector<RatePoint> pts) {
  LSC_CHECK(pts.size() >= 4, invalid_argument, "bd metrics need at least 4 rate points");
  std::sort(pts.begin(), pts.end(), [](const RatePoint& a, const RatePoint& b) { return a.bpp < b.bpp; });
  std::vector<double> x, y;
  for (const auto& p : pts) {
    LSC_CHECK(p.bpp > 0.0, invalid_argument, "rate points must have positive bpp");
    x.push_back(std::log10(p.bpp));
    y.push_back(p.metric);
  }
  return Pchip(std::move(x), std::move(y));
}
}  // namespace

BDResult bd_metrics(std::vector<RatePoint> curve_a, std::vector<RatePoint> curve_b) {
  BDResult res;
  {
    auto fa = fit_lograte_vs_metric(curve_a);
    auto fb = fit_lograte_vs_metric(curve_b);
    auto ma = std::minmax_element(curve_a.begin(), curve_a.end(),
                                  [](const RatePoint& x, const RatePoint& y) { return x.metric < y.metric; });
    auto mb = std::minmax_element(curve_b.begin(), curve_b.end(),
                                  [](const RatePoint& x, const RatePoint& y) { return x.metric < y.metric; });
    const double lo = std::max(ma.first->metric, mb.first->metric);
    const double hi = std::min(ma.second->metric, mb.second->metric);
    LSC_CHECK(hi > lo, invalid_argument, "curves have no overlapping metric range");
    res.overlap_lo = lo;
    res.overlap_hi = hi;
    const double avg_diff = (fb.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    res.bd_rate_percent = (std::pow(10.0, avg_diff) - 1.0) * 100.0;
  }
  {
    auto fa = fit_metric_vs_lograte(curve_a);
    auto fb = fit_metric_vs_lograte(curve_b);
    auto ra = std::minmax_element(curve_a.begin(), curve_a.end(),
                                  [](const RatePoint& x, const RatePoint& y) { return x.bpp < y.bpp; });
    auto rb = std::minmax_element(curve_b.begin(), curve_b.end(),
                                  [](const RatePoint& x, const RatePoint& y) { return x.bpp < y.bpp; });
    const double lo = std::log10(std::max(ra.first->bpp, rb.first->bpp));
    const double hi = std::log10(std::min(ra.second->bpp, rb.second->bpp));
    LSC_CHECK(hi > lo, invalid_argument, "curves have no overlapping rate range");
    res.bd_metric = (fb.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  }
  return res;
}

CompositionReport composition_report(const bits::Header& header) {
  CompositionReport rep;
  double total = 0.0;
  for (std::uint32_t v : header.stream_lengths) total += v;
  LSC_CHECK(total > 0.0, invalid_argument, "empty container");
  rep.names.push_back("side");
  for (int j = 0; j < header.num_layers; ++j) {
    if (j == 0)
      rep.names.push_back("base");
    else if (j == header.num_layers - 1)
      rep.names.push_back("top");
    else
      rep.names.push_back("enh" + std::to_string(j));
  }
  for (std::uint32_t v : header.stream_lengths) rep.percent.push_back(100.0 * v / total);
  return rep;
}

PlotOutcome emit_plots(const std::vector<train::TrainRecord>& log,
                       const std::vector<std::vector<RatePoint>>& rd_curves,
                       const std::vector<std::string>& rd_curve_names,
                       const std::vector<CompositionReport>& compositions,
                       const std::filesystem::path& out_dir) {
  PlotOutcome out;
  std::filesystem::create_directories(out_dir);

  if (!rd_curves.empty()) {
    svg::LinePlot plot("rate vs quality", "bpp", "metric");
    for (std::size_t i = 0; i < rd_curves.size(); ++i) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& p : rd_curves[i]) pts.push_back({p.bpp, p.metric});
      std::sort(pts.begin(), pts.end());
      plot.add_series(i < rd_curve_names.size() ? rd_curve_names[i] : "curve" + std::to_string(i), pts);
    }
    const auto path = out_dir / "rd_curves.svg";
    io::write_text_atomic(path, plot.render());
    out.written.push_back(path);
  } else {
    out.warnings.push_back("no rate-distortion curves given; rd_curves.svg skipped");
  }

  bool any_mi = false;
  for (const auto& r : log) any_mi = any_mi || !r.mi_per_layer.empty();
  if (any_mi) {
    svg::LinePlot plot("clustered mutual information vs epoch", "epoch", "bits per fiber");
    std::size_t layers = 0;
    for (const auto& r : log) layers = std::max(layers, r.mi_per_layer.size());
    for (std::size_t j = 0; j < layers; ++j) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& r : log)
        if (j < r.mi_per_layer.size()) pts.push_back({static_cast<double>(r.epoch), r.mi_per_layer[j]});
      plot.add_series("layer " + std::to_string(j + 1), pts);
    }
    const auto path = out_dir / "mi_vs_epoch.svg";
    io::write_text_atomic(path, plot.render());
    out.written.push_back(path);
  } else {
    out.warnings.push_back("metrics log has no MI series; mi_vs_epoch.svg skipped");
  }

  if (!log.empty()) {
    svg::LinePlot plot("rate shares vs epoch", "epoch", "percent of total");
    std::size_t nshare = 0;
    for (const auto& r : log) nshare = std::max(nshare, r.share_percent.size());
    for (std::size_t j = 0; j < nshare; ++j) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& r : log)
        if (j < r.share_percent.size()) pts.push_back({static_cast<double>(r.epoch), r.share_percent[j]});
      plot.add_series(j + 1 == nshare ? "hyper" : "layer " + std::to_string(j + 1), pts);
    }
    const auto path = out_dir / "share_vs_epoch.svg";
    io::write_text_atomic(path, plot.render());
    out.written.push_back(path);
  } else {
    out.warnings.push_back("metrics log empty; share_vs_epoch.svg skipped");
  }

  if (!compositions.empty()) {
    std::vector<std::vector<double>> stacks;
    std::vector<std::string> bar_names;
    std::vector<std::string> part_names = compositions[0].names;
    for (std::size_t i = 0; i < compositions.size(); ++i) {
      stacks.push_back(compositions[i].percent);
      bar_names.push_back("q" + std::to_string(i + 1));
    }
    svg::StackedBars bars("bitstream composition", part_names, bar_names, stacks);
    const auto path = out_dir / "composition.svg";
    io::write_text_atomic(path, bars.render());
    out.written.push_back(path);
  } else {
    out.warnings.push_back("no composition reports given; composition.svg skipped");
  }
  return out;
}

}  // namespace lsc::evalkit
