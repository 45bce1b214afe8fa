#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lsc/bitstream.h"
#include "lsc/tensor.h"
#include "lsc/training.h"

namespace lsc::evalkit {

double mse(const Tensor& a, const Tensor& b);
/// PSNR in dB on [0,1] data; +infinity for identical inputs.
double psnr(const Tensor& a, const Tensor& b);
/// 5-scale MS-SSIM with the standard weights, 11x11 Gaussian window
/// (sigma 1.5), averaged over channels. Requires min dim >= 176.
double ms_ssim(const Tensor& a, const Tensor& b);

struct RatePoint {
  double bpp = 0.0;
  double metric = 0.0;
  std::string label;
};

struct BDResult {
  double bd_rate_percent = 0.0;  // average rate change of b vs a at equal metric
  double bd_metric = 0.0;        // average metric change of b vs a at equal rate
  double overlap_lo = 0.0, overlap_hi = 0.0;  // metric overlap used for bd-rate
};

/// Bjontegaard deltas from piecewise-cubic-Hermite fits of (metric,
/// log-rate). Needs >= 4 points per curve and overlapping ranges.
BDResult bd_metrics(std::vector<RatePoint> curve_a, std::vector<RatePoint> curve_b);

struct CompositionReport {
  std::vector<std::string> names;   // side, base, enh..., top
  std::vector<double> percent;      // sums to 100
};

CompositionReport composition_report(const bits::Header& header);

/// Monotone piecewise-cubic interpolant (Fritsch-Carlson slopes) with an
/// exact segment integral; exposed for the numeric-integration oracle.
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y);
  double eval(double x) const;
  double integral(double lo, double hi) const;

 private:
  std::vector<double> x_, y_, m_;
};

struct PlotOutcome {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Renders RD curves, MI-vs-epoch, share-vs-epoch, and bitstream
/// composition bars as deterministic SVG files.
PlotOutcome emit_plots(const std::vector<train::TrainRecord>& log,
                       const std::vector<std::vector<RatePoint>>& rd_curves,
                       const std::vector<std::string>& rd_curve_names,
                       const std::vector<CompositionReport>& compositions,
                       const std::filesystem::path& out_dir);

}  // namespace lsc::evalkit
