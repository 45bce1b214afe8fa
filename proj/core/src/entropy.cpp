#include "lsc/entropy.h"

#include <algorithm>
#include <cmath>

#include "lsc/scalar_ops.h"

namespace lsc::entropy {

using nn::Tape;
using nn::Var;

namespace {
constexpr double kBitsProbFloor = 1e-40;
constexpr int kPriorWidth = 3;
constexpr int kPriorStages = 4;  // 1 -> 3 -> 3 -> 3 -> 1

int stage_in(int k) { return k == 0 ? 1 : kPriorWidth; }
int stage_out(int k) { return k == kPriorStages - 1 ? 1 : kPriorWidth; }
}  // namespace

FactorizedPrior::FactorizedPrior(std::string name, int channels, nn::Rng& rng) : channels_(channels) {
  // Initialize so the composed pre-sigmoid map is approximately x -> s*x
  // with s = 0.81, which makes integer bins near 0 carry about 1/5 of the
  // mass each (a flat-ish prior over [-2, 2]).
  const double slope = 0.81;
  const double f = std::pow(slope, 1.0 / kPriorStages);
  for (int k = 0; k < kPriorStages; ++k) {
    const int win = stage_in(k), wout = stage_out(k);
    // Grouped 1x1 conv weight: {1, 1, win, channels*wout}; softplus-reparameterized.
    Tensor h({1, 1, win, channels * wout});
    const double target = f / win;
    const double raw = std::log(std::expm1(target));
    for (std::int64_t i = 0; i < h.size(); ++i) h[i] = raw + rng.uniform(-0.01, 0.01);
    h_.emplace_back(name + ".h" + std::to_string(k), std::move(h));
    Tensor b({channels * wout});
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.05, 0.05);
    b_.emplace_back(name + ".b" + std::to_string(k), std::move(b));
    if (k < kPriorStages - 1) {
      Tensor a({channels * wout});
      for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-0.05, 0.05);
      a_.emplace_back(name + ".a" + std::to_string(k), std::move(a));
    }
  }
}

Var FactorizedPrior::logits(Tape& t, Var x) const {
  Var h = x;
  Var zero_bias;
  for (int k = 0; k < kPriorStages; ++k) {
    Var w = softplus(t.param(const_cast<nn::Parameter&>(h_[k])));
    Var b = t.param(const_cast<nn::Parameter&>(b_[k]));
    h = conv2d(h, w, b, 1, 0, channels_);
    if (k < kPriorStages - 1) {
      Var gate = tanh_op(t.param(const_cast<nn::Parameter&>(a_[k])));
      const Tensor& hv = t.value(h);
      Var zeros = t.constant(Tensor({hv.c()}, 0.0));
      h = add(h, channel_affine(tanh_op(h), gate, zeros));
    }
  }
  return h;
}

Var FactorizedPrior::bits_map(Tape& t, Var z) const {
  LSC_CHECK(t.value(z).c() == channels_, shape_mismatch, "prior channel mismatch");
  Var hi = sigmoid(logits(t, add_scalar(z, 0.5)));
  Var lo = sigmoid(logits(t, add_scalar(z, -0.5)));
  return neg(log2_clamped(sub(hi, lo), kBitsProbFloor));
}

double FactorizedPrior::cdf(int channel, double x) const {
  LSC_CHECK(channel >= 0 && channel < channels_, invalid_argument, "prior channel out of range");
  double buf[kPriorWidth] = {x, 0.0, 0.0};
  int cur_n = 1;
  for (int k = 0; k < kPriorStages; ++k) {
    const int win = stage_in(k), wout = stage_out(k);
    double out[kPriorWidth] = {0.0, 0.0, 0.0};
    const Tensor& hw = h_[k].value;
    const Tensor& bb = b_[k].value;
    // Mirrors the grouped conv2d loop order: ic outer, oc inner.
    for (int u = 0; u < wout; ++u) out[u] = bb[channel * wout + u];
    for (int v = 0; v < win; ++v) {
      const double xv = buf[v];
      for (int u = 0; u < wout; ++u) {
        const double w = nn::softplus_scalar(hw[static_cast<std::int64_t>(v) * (channels_ * wout) +
                                               channel * wout + u]);
        out[u] += xv * w;
      }
    }
    if (k < kPriorStages - 1) {
      const Tensor& av = a_[k].value;
      for (int u = 0; u < wout; ++u) {
        const double gate = std::tanh(av[channel * wout + u]);
        out[u] = out[u] + gate * std::tanh(out[u]);
      }
    }
    for (int u = 0; u < wout; ++u) buf[u] = out[u];
    cur_n = wout;
  }
  (void)cur_n;
  return nn::sigmoid_scalar(buf[0]);
}

double FactorizedPrior::bin_probability(int channel, int value) const {
  return cdf(channel, value + 0.5) - cdf(channel, value - 0.5);
}

void FactorizedPrior::collect(std::vector<nn::Parameter*>& out) {
  for (auto& p : h_) out.push_back(&p);
  for (auto& p : b_) out.push_back(&p);
  for (auto& p : a_) out.push_back(&p);
}

double RateReport::latent_bits() const {
  double s = 0.0;
  for (double b : layer_bits) s += b;
  return s;
}

double RateReport::bpp() const {
  LSC_CHECK(pixel_count > 0, invalid_argument, "rate report needs a pixel count");
  return total_bits() / pixel_count;
}

double RateReport::base_latent_share() const {
  const double lat = latent_bits();
  LSC_CHECK(lat > 0.0, invalid_argument, "zero latent bits");
  return layer_bits[0] / lat;
}

std::vector<double> RateReport::shares_of_total() const {
  const double tot = total_bits();
  LSC_CHECK(tot > 0.0, invalid_argument, "zero total bits");
  std::vector<double> s;
  for (double b : layer_bits) s.push_back(100.0 * b / tot);
  s.push_back(100.0 * hyper_bits / tot);
  return s;
}

EntropyModel::EntropyModel(const codec::LayerSpec& spec, int latent_channels, const EntropyConfig& cfg,
                           nn::Rng& rng)
    : spec_(spec), latent_channels_(latent_channels), cfg_(cfg) {
  spec_.validate(latent_channels);
  prior_ = FactorizedPrior("prior", cfg.hyper_channels, rng);
  const int fh = cfg.hyper_hidden, ch = cfg.hyper_channels;
  ha_.emplace_back("ha0", latent_channels, fh, 3, 1, 1, rng);
  ha_.emplace_back("ha1", fh, fh, 5, 2, 2, rng);
  ha_.emplace_back("ha2", fh, ch, 5, 2, 2, rng);
  hs_up_.emplace_back("hs0", ch, fh, 5, 2, 2, 1, rng);
  hs_up_.emplace_back("hs1", fh, fh, 5, 2, 2, 1, rng);
  hs_out_ = nn::Conv2d("hs2", fh, 2 * latent_channels, 3, 1, 1, rng);

  for (int j = 0; j < spec_.num_layers(); ++j) {
    const int lj = spec_.channel_counts[j];
    ctx_.emplace_back("ctx" + std::to_string(j), lj, 2 * lj, cfg.ctx_kernel, nn::MaskKind::strict_causal,
                      rng);
    const int c1 = static_cast<int>(std::lround(10.0 * lj / 3.0));
    const int c2 = static_cast<int>(std::lround(8.0 * lj / 3.0));
    std::vector<nn::MaskedConv2d> stages;
    stages.emplace_back("ep" + std::to_string(j) + "_0", 4 * lj, c1, cfg.ep_kernel,
                        nn::MaskKind::causal_center, rng);
    stages.emplace_back("ep" + std::to_string(j) + "_1", c1, c2, cfg.ep_kernel, nn::MaskKind::causal_center,
                        rng);
    stages.emplace_back("ep" + std::to_string(j) + "_2", c2, 2 * lj, cfg.ep_kernel,
                        nn::MaskKind::causal_center, rng);
    ep_.push_back(std::move(stages));
  }
}

Var EntropyModel::hyper_analysis(Tape& t, Var y) const {
  Var h = ha_[0].forward(t, y);
  h = relu(h);
  h = ha_[1].forward(t, h);
  h = relu(h);
  h = ha_[2].forward(t, h);
  return h;
}

Var EntropyModel::hyper_synthesis(Tape& t, Var zhat, int n, int m) const {
  Var h = hs_up_[0].forward(t, zhat);
  h = relu(h);
  h = hs_up_[1].forward(t, h);
  h = relu(h);
  h = hs_out_.forward(t, h);
  const Tensor& hv = t.value(h);
  LSC_CHECK(hv.h() >= n && hv.w() >= m, shape_mismatch, "hyper synthesis output smaller than latent");
  return crop_spatial(h, n, m);
}

Var EntropyModel::context(Tape& t, Var yhat_j, int layer) const {
  LSC_CHECK(layer >= 0 && layer < spec_.num_layers(), invalid_argument, "layer out of range");
  LSC_CHECK(t.value(yhat_j).c() == spec_.channel_counts[layer], shape_mismatch,
            "context input width mismatch");
  return ctx_[layer].forward(t, yhat_j);
}

std::pair<Var, Var> EntropyModel::entropy_parameters(Tape& t, Var ctx_out, Var h_j, int layer) const {
  const int lj = spec_.channel_counts[layer];
  LSC_CHECK(t.value(ctx_out).c() == 2 * lj && t.value(h_j).c() == 2 * lj, shape_mismatch,
            "entropy parameter inputs must both have 2*L_j channels");
  Var h = nn::concat_c({ctx_out, h_j});
  h = ep_[layer][0].forward(t, h);
  h = leaky_relu(h, cfg_.lrelu_slope);
  h = ep_[layer][1].forward(t, h);
  h = leaky_relu(h, cfg_.lrelu_slope);
  h = ep_[layer][2].forward(t, h);
  Var mu = slice_c(h, 0, lj);
  Var sigma = add_scalar(softplus(slice_c(h, lj, lj)), cfg_.sigma_min);
  return {mu, sigma};
}

Var EntropyModel::hyper_slice(Tape& t, Var h_full, int layer) const {
  LSC_CHECK(t.value(h_full).c() == 2 * latent_channels_, shape_mismatch, "hyper tensor width mismatch");
  const int off = 2 * spec_.layer_offset(layer);
  return slice_c(h_full, off, 2 * spec_.channel_counts[layer]);
}

Tensor EntropyModel::hyper_analysis_eval(const Tensor& y) const {
  Tape t;
  return t.value(hyper_analysis(t, t.constant(y)));
}

Tensor EntropyModel::hyper_synthesis_eval(const Tensor& zhat, int n, int m) const {
  Tape t;
  return t.value(hyper_synthesis(t, t.constant(zhat), n, m));
}

Tensor EntropyModel::context_eval(const Tensor& yhat_j, int layer) const {
  Tape t;
  return t.value(context(t, t.constant(yhat_j), layer));
}

EntropyParams EntropyModel::layer_params_teacher(const Tensor& yhat_j, const Tensor& h_full,
                                                 int layer) const {
  Tape t;
  Var ctx = context(t, t.constant(yhat_j), layer);
  Var hj = hyper_slice(t, t.constant(h_full), layer);
  auto [mu, sigma] = entropy_parameters(t, ctx, hj, layer);
  return EntropyParams{t.value(mu), t.value(sigma)};
}

std::pair<int, int> EntropyModel::hyper_dims(int n, int m) {
  auto down2 = [](int v) { return (v + 4 - 5) / 2 + 1; };  // kernel 5, pad 2, stride 2
  return {down2(down2(n)), down2(down2(m))};
}

void EntropyModel::collect(std::vector<nn::Parameter*>& out) {
  prior_.collect(out);
  for (auto& m : ha_) m.collect(out);
  for (auto& m : hs_up_) m.collect(out);
  hs_out_.collect(out);
  for (int j = 0; j < spec_.num_layers(); ++j) collect_layer(j, out);
}

void EntropyModel::collect_layer(int layer, std::vector<nn::Parameter*>& out) {
  ctx_[layer].collect(out);
  for (auto& m : ep_[layer]) m.collect(out);
}

double gaussian_bits_total(const Tensor& x, const EntropyParams& params) {
  LSC_CHECK(x.same_shape(params.mu) && x.same_shape(params.sigma), shape_mismatch,
            "gaussian_bits_total shapes");
  double bits = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    bits += -std::log2(nn::gaussian_bin_probability(x[i], params.mu[i], params.sigma[i]));
  }
  LSC_CHECK(std::isfinite(bits), numeric, "non-finite rate estimate");
  return bits;
}

RateReport estimate_rate(const Tensor& yhat_full, const Tensor& zhat, const EntropyModel& em,
                         int pixel_count) {
  const auto& spec = em.layer_spec();
  LSC_CHECK(yhat_full.c() == em.latent_channels(), shape_mismatch, "latent width mismatch");
  RateReport report;
  report.pixel_count = pixel_count;
  const int n = yhat_full.h(), m = yhat_full.w();

  Tape t;
  Var h_full = em.hyper_synthesis(t, t.constant(zhat), n, m);
  for (int j = 0; j < spec.num_layers(); ++j) {
    Var yj = slice_c(t.constant(yhat_full), spec.layer_offset(j), spec.channel_counts[j]);
    Var ctx = em.context(t, yj, j);
    Var hj = em.hyper_slice(t, h_full, j);
    auto [mu, sigma] = em.entropy_parameters(t, ctx, hj, j);
    Var bits = sum(gaussian_bin_bits(yj, mu, sigma));
    report.layer_bits.push_back(t.value(bits)[0]);
  }
  Var zbits = sum(em.prior().bits_map(t, t.constant(zhat)));
  report.hyper_bits = t.value(zbits)[0];
  return report;
}

// ---------------------------------------------------------------------------
// Sequential autoregressive evaluation
// ---------------------------------------------------------------------------

namespace {

// Stride-1 convolution with pre-masked weights, evaluated only on the
// output rectangle [r0..r1] x [c0..c1] (clamped). Inputs are given as up
// to two channel-concatenated tensors. Loop order matches the tape op so
// results are bit-identical. Optionally applies leaky-relu to results.
struct DualInput {
  const Tensor* a = nullptr;
  const Tensor* b = nullptr;
  int ca = 0, cb = 0;
  double get(int y, int x, int k) const { return k < ca ? a->at(y, x, k) : b->at(y, x, k - ca); }
};

void conv_rect(const DualInput& in, int H, int W, const Tensor& w, const Tensor& bias, int pad, Tensor& out,
               int r0, int r1, int c0, int c1, double lrelu_slope, bool apply_act) {
  const int kh = w.dims()[0], kw = w.dims()[1], cin = w.dims()[2], cout = w.dims()[3];
  LSC_CHECK(cin == in.ca + in.cb, shape_mismatch, "conv_rect channel mismatch");
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, H - 1);
  c1 = std::min(c1, W - 1);
  std::vector<double> row(static_cast<std::size_t>(cout));
  for (int oy = r0; oy <= r1; ++oy) {
    for (int ox = c0; ox <= c1; ++ox) {
      for (int oc = 0; oc < cout; ++oc) row[oc] = bias[oc];
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const double* wbase = w.data() + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
          for (int ic = 0; ic < cin; ++ic) {
            const double xval = in.get(iy, ix, ic);
            if (xval == 0.0) continue;
            const double* wrow = wbase + static_cast<std::size_t>(ic) * cout;
            for (int oc = 0; oc < cout; ++oc) row[oc] += xval * wrow[oc];
          }
        }
      }
      for (int oc = 0; oc < cout; ++oc) {
        out.at(oy, ox, oc) = apply_act ? nn::leaky_relu_scalar(row[oc], lrelu_slope) : row[oc];
      }
    }
  }
}

Tensor masked_weights(const nn::MaskedConv2d& m) {
  Tensor w = m.w.value;
  const Tensor& mask = m.mask();
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] *= mask[i];
  return w;
}

}  // namespace

LayerAutoregressor::LayerAutoregressor(const EntropyModel& em, const Tensor& h_full, int layer, int n,
                                       int m)
    : em_(&em), layer_(layer), n_(n), m_(m) {
  const auto& spec = em.layer_spec();
  LSC_CHECK(layer >= 0 && layer < spec.num_layers(), invalid_argument, "layer out of range");
  LSC_CHECK(h_full.h() == n && h_full.w() == m && h_full.c() == 2 * em.latent_channels(), shape_mismatch,
            "hyper tensor shape mismatch");
  lj_ = spec.channel_counts[layer];
  lrelu_ = em.config().lrelu_slope;
  sigma_min_ = em.config().sigma_min;
  ctx_pad_ = em.config().ctx_kernel / 2;
  ep_pad_ = em.config().ep_kernel / 2;

  const int off = 2 * spec.layer_offset(layer);
  h_j_ = Tensor::hwc(n, m, 2 * lj_);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < m; ++x)
      for (int k = 0; k < 2 * lj_; ++k) h_j_.at(y, x, k) = h_full.at(y, x, off + k);

  w_ctx_ = masked_weights(em.ctx_module(layer));
  b_ctx_ = em.ctx_module(layer).b.value;
  for (const auto& stage : em.ep_modules(layer)) {
    w_ep_.push_back(masked_weights(stage));
    b_ep_.push_back(stage.b.value);
  }

  yhat_ = Tensor::hwc(n, m, lj_);
  ctx_map_ = Tensor::hwc(n, m, 2 * lj_);
  ep1_map_ = Tensor::hwc(n, m, w_ep_[0].dims()[3]);
  ep2_map_ = Tensor::hwc(n, m, w_ep_[1].dims()[3]);
}

void LayerAutoregressor::params_at(int py, int px, std::vector<double>& mu, std::vector<double>& sigma) {
  const int r = ep_pad_;
  // Dependency cone: ep3(p) <- ep2 within r <- ep1 within 2r <- ctx within 3r.
  DualInput yin{&yhat_, nullptr, lj_, 0};
  conv_rect(yin, n_, m_, w_ctx_, b_ctx_, ctx_pad_, ctx_map_, py - 3 * r, py, px - 3 * r, px + 3 * r, 0.0,
            false);
  DualInput ep1in{&ctx_map_, &h_j_, 2 * lj_, 2 * lj_};
  conv_rect(ep1in, n_, m_, w_ep_[0], b_ep_[0], ep_pad_, ep1_map_, py - 2 * r, py, px - 2 * r, px + 2 * r,
            lrelu_, true);
  DualInput ep2in{&ep1_map_, nullptr, ep1_map_.c(), 0};
  conv_rect(ep2in, n_, m_, w_ep_[1], b_ep_[1], ep_pad_, ep2_map_, py - r, py, px - r, px + r, lrelu_, true);

  Tensor ep3 = Tensor::hwc(n_, m_, 2 * lj_);  // only (py,px) is filled
  DualInput ep3in{&ep2_map_, nullptr, ep2_map_.c(), 0};
  conv_rect(ep3in, n_, m_, w_ep_[2], b_ep_[2], ep_pad_, ep3, py, py, px, px, 0.0, false);

  mu.resize(static_cast<std::size_t>(lj_));
  sigma.resize(static_cast<std::size_t>(lj_));
  for (int k = 0; k < lj_; ++k) {
    mu[k] = ep3.at(py, px, k);
    sigma[k] = nn::softplus_scalar(ep3.at(py, px, lj_ + k)) + sigma_min_;
  }
}

void LayerAutoregressor::commit(int py, int px, const std::vector<double>& values) {
  LSC_CHECK(static_cast<int>(values.size()) == lj_, shape_mismatch, "commit width mismatch");
  for (int k = 0; k < lj_; ++k) yhat_.at(py, px, k) = values[k];
}

SequentialQuantizeResult autoregressive_quantize(const Tensor& y_j, const EntropyModel& em,
                                                 const Tensor& h_full, int layer) {
  const int n = y_j.h(), m = y_j.w(), lj = y_j.c();
  LayerAutoregressor ar(em, h_full, layer, n, m);
  LSC_CHECK(lj == ar.layer_channels(), shape_mismatch, "sub-latent width mismatch");
  SequentialQuantizeResult res;
  res.mu = Tensor::hwc(n, m, lj);
  res.sigma = Tensor::hwc(n, m, lj);
  res.symbols.reserve(static_cast<std::size_t>(n) * m * lj);
  std::vector<double> mu, sigma, vals(static_cast<std::size_t>(lj));
  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < m; ++px) {
      ar.params_at(py, px, mu, sigma);
      for (int k = 0; k < lj; ++k) {
        const int sym = static_cast<int>(std::llround(y_j.at(py, px, k) - mu[k]));
        res.symbols.push_back(sym);
        vals[k] = mu[k] + sym;
        res.mu.at(py, px, k) = mu[k];
        res.sigma.at(py, px, k) = sigma[k];
      }
      ar.commit(py, px, vals);
    }
  }
  res.yhat = ar.yhat();
  return res;
}

}  // namespace lsc::entropy
