#include "lsc/nn.h"

#include <cmath>

namespace lsc::nn {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void init_conv_weight(Tensor& w, Rng& rng, double gain) {
  LSC_CHECK(w.rank() == 4, invalid_argument, "conv weight must be rank 4");
  const int fan_in = w.dims()[0] * w.dims()[1] * w.dims()[2];
  const double stddev = gain * std::sqrt(2.0 / fan_in);
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
}

Conv2d::Conv2d(std::string name, int cin, int cout, int kernel, int stride_, int pad_, Rng& rng, int groups_,
               bool bias, double gain)
    : has_bias(bias), stride(stride_), pad(pad_), groups(groups_) {
  LSC_CHECK(cin % groups == 0 && cout % groups == 0, invalid_argument, "conv channels not divisible by groups");
  Tensor wt({kernel, kernel, cin / groups, cout});
  init_conv_weight(wt, rng, gain);
  w = Parameter(name + ".w", std::move(wt));
  if (has_bias) b = Parameter(name + ".b", Tensor({cout}, 0.0));
}

Var Conv2d::forward(Tape& t, Var x) const {
  Var wv = t.param(const_cast<Parameter&>(w));
  Var bv = has_bias ? t.param(const_cast<Parameter&>(b)) : Var{};
  return conv2d(x, wv, bv, stride, pad, groups);
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  if (has_bias) out.push_back(&b);
}

ConvTranspose2d::ConvTranspose2d(std::string name, int cin, int cout, int kernel, int stride_, int pad_,
                                 int opad_, Rng& rng, bool bias, double gain)
    : has_bias(bias), stride(stride_), pad(pad_), opad(opad_) {
  Tensor wt({kernel, kernel, cin, cout});
  init_conv_weight(wt, rng, gain);
  w = Parameter(name + ".w", std::move(wt));
  if (has_bias) b = Parameter(name + ".b", Tensor({cout}, 0.0));
}

Var ConvTranspose2d::forward(Tape& t, Var x) const {
  Var wv = t.param(const_cast<Parameter&>(w));
  Var bv = has_bias ? t.param(const_cast<Parameter&>(b)) : Var{};
  return conv2d_transpose(x, wv, bv, stride, pad, opad);
}

void ConvTranspose2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  if (has_bias) out.push_back(&b);
}

MaskedConv2d::MaskedConv2d(std::string name, int cin, int cout, int kernel, MaskKind kind_, Rng& rng)
    : kind(kind_), pad(kernel / 2) {
  LSC_CHECK(kernel % 2 == 1, invalid_argument, "masked conv kernel must be odd");
  Tensor wt({kernel, kernel, cin, cout});
  init_conv_weight(wt, rng);
  w = Parameter(name + ".w", std::move(wt));
  b = Parameter(name + ".b", Tensor({cout}, 0.0));
  mask_ = Tensor({kernel, kernel, cin, cout}, 0.0);
  const int mid = kernel / 2;
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      bool allowed = ky < mid || (ky == mid && kx < mid) ||
                     (kind == MaskKind::causal_center && ky == mid && kx == mid);
      double mval = allowed ? 1.0 : 0.0;
      for (int ic = 0; ic < cin; ++ic)
        for (int oc = 0; oc < cout; ++oc)
          mask_[((static_cast<std::int64_t>(ky) * kernel + kx) * cin + ic) * cout + oc] = mval;
    }
  }
}

Var MaskedConv2d::forward(Tape& t, Var x) const {
  Var wv = t.param(const_cast<Parameter&>(w));
  Var masked = mul(wv, t.constant(mask_));
  Var bv = t.param(const_cast<Parameter&>(b));
  return conv2d(x, masked, bv, 1, pad, 1);
}

void MaskedConv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

Gdn::Gdn(std::string name, int channels, bool inverse_, double beta_min_)
    : inverse(inverse_), beta_min(beta_min_) {
  beta = Parameter(name + ".beta", Tensor({channels}, 1.0));
  Tensor g({1, 1, channels, channels}, 0.0);
  for (int i = 0; i < channels; ++i) g[static_cast<std::int64_t>(i) * channels + i] = 0.1;
  gamma = Parameter(name + ".gamma", std::move(g));
}

Var Gdn::forward(Tape& t, Var x) const {
  validate();
  Var gw = t.param(const_cast<Parameter&>(gamma));
  Var bb = t.param(const_cast<Parameter&>(beta));
  Var s = conv2d(square(x), gw, bb, 1, 0, 1);
  return mul(x, pow_scalar(s, inverse ? 0.5 : -0.5));
}

void Gdn::collect(std::vector<Parameter*>& out) {
  out.push_back(&beta);
  out.push_back(&gamma);
}

void Gdn::project() {
  for (std::int64_t i = 0; i < beta.value.size(); ++i)
    if (beta.value[i] < beta_min) beta.value[i] = beta_min;
  for (std::int64_t i = 0; i < gamma.value.size(); ++i)
    if (gamma.value[i] < 0.0) gamma.value[i] = 0.0;
}

void Gdn::validate() const {
  for (std::int64_t i = 0; i < beta.value.size(); ++i)
    LSC_CHECK(beta.value[i] >= beta_min, constraint, "gdn beta below beta_min");
  for (std::int64_t i = 0; i < gamma.value.size(); ++i)
    LSC_CHECK(gamma.value[i] >= 0.0, constraint, "gdn gamma negative");
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.dims(), 0.0);
    v_.emplace_back(p->value.dims(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double Adam::global_grad_norm() const {
  double s = 0.0;
  for (const Parameter* p : params_)
    for (std::int64_t i = 0; i < p->grad.size(); ++i) s += p->grad[i] * p->grad[i];
  return std::sqrt(s);
}

void Adam::clip_global_grad_norm(double max_norm) {
  const double norm = global_grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (Parameter* p : params_)
    for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter* p = params_[k];
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::uint64_t params_fingerprint(const std::vector<Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h;
}

}  // namespace lsc::nn
