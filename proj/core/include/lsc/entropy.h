#pragma once

#include <utility>
#include <vector>

#include "lsc/codec.h"
#include "lsc/nn.h"

namespace lsc::entropy {

struct EntropyConfig {
  int hyper_hidden = 32;
  int hyper_channels = 16;
  double sigma_min = 0.04;
  int ctx_kernel = 5;
  int ep_kernel = 3;
  double lrelu_slope = 0.01;
};

/// Per-element Gaussian parameters for one sub-latent.
struct EntropyParams {
  Tensor mu;
  Tensor sigma;  // >= sigma_min by construction
};

/// Univariate flexible-CDF model, one independent CDF per channel.
/// Three internal stages of width 3 between scalar input and output;
/// monotone by construction (softplus-reparameterized weights, gated
/// tanh residuals with |gate| < 1, sigmoid output).
class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  FactorizedPrior(std::string name, int channels, nn::Rng& rng);

  /// Elementwise bits -log2(c(z+0.5) - c(z-0.5)).
  nn::Var bits_map(nn::Tape& t, nn::Var z) const;

  /// Tape-free CDF evaluation used to build coder tables.
  double cdf(int channel, double x) const;
  double bin_probability(int channel, int value) const;

  void collect(std::vector<nn::Parameter*>& out);
  int channels() const { return channels_; }

 private:
  nn::Var logits(nn::Tape& t, nn::Var x) const;
  int channels_ = 0;
  std::vector<nn::Parameter> h_;  // grouped 1x1 conv weights, softplus-reparameterized
  std::vector<nn::Parameter> b_;  // biases
  std::vector<nn::Parameter> a_;  // tanh gates (internal stages)
};

struct RateReport {
  std::vector<double> layer_bits;
  double hyper_bits = 0.0;
  int pixel_count = 0;

  double latent_bits() const;
  double total_bits() const { return latent_bits() + hyper_bits; }
  double bpp() const;
  /// Base-layer share of the latent bits (hyper excluded), in [0,1].
  double base_latent_share() const;
  /// Percent shares of the grand total: layers first, hyper last. Sums to 100.
  std::vector<double> shares_of_total() const;
};

/// Hyperprior + per-layer context models (CTX_j) and entropy parameter
/// heads (EP_j). Each layer has its own CTX/EP; the hyper tensor H is
/// sliced contiguously in layer order (2*L_j channels per layer).
class EntropyModel {
 public:
  EntropyModel() = default;
  EntropyModel(const codec::LayerSpec& spec, int latent_channels, const EntropyConfig& cfg, nn::Rng& rng);

  nn::Var hyper_analysis(nn::Tape& t, nn::Var y) const;
  /// Output has 2*C channels at latent resolution (n, m).
  nn::Var hyper_synthesis(nn::Tape& t, nn::Var zhat, int n, int m) const;
  /// Strictly causal context prediction on a quantized sub-latent; 2*L_j channels.
  nn::Var context(nn::Tape& t, nn::Var yhat_j, int layer) const;
  /// (mu, sigma) from concatenated context output and hyper slice.
  std::pair<nn::Var, nn::Var> entropy_parameters(nn::Tape& t, nn::Var ctx_out, nn::Var h_j, int layer) const;
  nn::Var hyper_slice(nn::Tape& t, nn::Var h_full, int layer) const;

  // Tape-free conveniences (teacher-forced full tensors).
  Tensor hyper_analysis_eval(const Tensor& y) const;
  Tensor hyper_synthesis_eval(const Tensor& zhat, int n, int m) const;
  Tensor context_eval(const Tensor& yhat_j, int layer) const;
  EntropyParams layer_params_teacher(const Tensor& yhat_j, const Tensor& h_full, int layer) const;

  static std::pair<int, int> hyper_dims(int n, int m);

  const FactorizedPrior& prior() const { return prior_; }
  FactorizedPrior& prior() { return prior_; }
  const EntropyConfig& config() const { return cfg_; }
  const codec::LayerSpec& layer_spec() const { return spec_; }
  int latent_channels() const { return latent_channels_; }

  void collect(std::vector<nn::Parameter*>& out);
  /// Only CTX_j and EP_j parameters of one layer (for independence checks).
  void collect_layer(int layer, std::vector<nn::Parameter*>& out);

  const nn::MaskedConv2d& ctx_module(int layer) const { return ctx_[layer]; }
  const std::vector<nn::MaskedConv2d>& ep_modules(int layer) const { return ep_[layer]; }

 private:
  codec::LayerSpec spec_;
  int latent_channels_ = 0;
  EntropyConfig cfg_;
  FactorizedPrior prior_;
  std::vector<nn::Conv2d> ha_;
  std::vector<nn::ConvTranspose2d> hs_up_;
  nn::Conv2d hs_out_;
  std::vector<nn::MaskedConv2d> ctx_;               // per layer
  std::vector<std::vector<nn::MaskedConv2d>> ep_;   // per layer, 3 stages
};

/// Total bits of a quantized tensor under per-element Gaussians.
double gaussian_bits_total(const Tensor& x, const EntropyParams& params);

/// Teacher-forced rate estimate on eval-quantized tensors.
RateReport estimate_rate(const Tensor& yhat_full, const Tensor& zhat, const EntropyModel& em,
                         int pixel_count);

/// Raster-order autoregressive evaluation of one layer's entropy
/// parameters. Produces, position by position, exactly the same (mu,
/// sigma) as the teacher-forced pass, while only ever reading already
/// committed positions. Used by both the encoder and the decoder.
class LayerAutoregressor {
 public:
  LayerAutoregressor(const EntropyModel& em, const Tensor& h_full, int layer, int n, int m);

  /// mu/sigma rows (length L_j) for a raster position, based on values
  /// committed so far.
  void params_at(int py, int px, std::vector<double>& mu, std::vector<double>& sigma);
  void commit(int py, int px, const std::vector<double>& values);
  const Tensor& yhat() const { return yhat_; }
  int layer_channels() const { return lj_; }

 private:
  const EntropyModel* em_;
  int layer_ = 0, n_ = 0, m_ = 0, lj_ = 0;
  double lrelu_ = 0.01, sigma_min_ = 0.04;
  int ctx_pad_ = 2, ep_pad_ = 1;
  Tensor h_j_;  // hyper slice for this layer (2*L_j channels)
  Tensor w_ctx_, b_ctx_;
  std::vector<Tensor> w_ep_, b_ep_;
  Tensor yhat_, ctx_map_, ep1_map_, ep2_map_;
};

/// Encoder-side sequential quantization of one sub-latent: produces the
/// quantized tensor, the integer symbols, and the per-element Gaussian
/// parameters actually used.
struct SequentialQuantizeResult {
  Tensor yhat;
  std::vector<int> symbols;  // raster order, channel-major within position
  Tensor mu;
  Tensor sigma;
};
SequentialQuantizeResult autoregressive_quantize(const Tensor& y_j, const EntropyModel& em,
                                                 const Tensor& h_full, int layer);

}  // namespace lsc::entropy
