#pragma once

#include <random>
#include <vector>

#include "lsc/autograd.h"
#include "lsc/tensor.h"

namespace lsc::nn {

/// Seeded RNG wrapper; the only randomness source in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }
  std::uint64_t u64() { return gen_(); }
  std::uint64_t u64_below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

/// Derives a stream seed from a base seed and a tag, so independent
/// consumers never share a generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

void init_conv_weight(Tensor& w, Rng& rng, double gain = 1.0);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int kernel, int stride, int pad, Rng& rng, int groups = 1,
         bool bias = true, double gain = 1.0);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Parameter*>& out);

  Parameter w;
  Parameter b;
  bool has_bias = true;
  int stride = 1, pad = 0, groups = 1;

 private:
  mutable Parameter* wp_ = nullptr;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, int cin, int cout, int kernel, int stride, int pad, int opad, Rng& rng,
                  bool bias = true, double gain = 1.0);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Parameter*>& out);

  Parameter w;
  Parameter b;
  bool has_bias = true;
  int stride = 1, pad = 0, opad = 0;
};

enum class MaskKind {
  strict_causal,   // raster order, center excluded
  causal_center,   // raster order, center included
};

/// Convolution whose kernel is multiplied by a fixed raster-order causal
/// mask, so output at a position never sees later positions.
class MaskedConv2d {
 public:
  MaskedConv2d() = default;
  MaskedConv2d(std::string name, int cin, int cout, int kernel, MaskKind kind, Rng& rng);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Parameter*>& out);
  const Tensor& mask() const { return mask_; }

  Parameter w;
  Parameter b;
  MaskKind kind = MaskKind::strict_causal;
  int pad = 0;

 private:
  Tensor mask_;
};

/// Generalized divisive normalization over channels:
///   gdn:  y_i = x_i / sqrt(beta_i + sum_j gamma_ji * x_j^2)
///   igdn: y_i = x_i * sqrt(beta_i + sum_j gamma_ji * x_j^2)
/// beta >= beta_min > 0 and gamma >= 0 are maintained by project().
class Gdn {
 public:
  Gdn() = default;
  Gdn(std::string name, int channels, bool inverse, double beta_min = 1e-6);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Parameter*>& out);
  /// Clamps parameters back into the feasible set (after an optimizer step).
  void project();
  /// Throws a constraint error if parameters left the feasible set.
  void validate() const;

  Parameter beta;   // {C}
  Parameter gamma;  // {1,1,C,C} as a 1x1 conv weight, [j][i] indexing
  bool inverse = false;
  double beta_min = 1e-6;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Parameter*> params, double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void zero_grad();
  double global_grad_norm() const;
  void clip_global_grad_norm(double max_norm);
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

/// FNV-1a over the raw bytes of all parameter values, in registration
/// order. Used to verify that "frozen" really means frozen.
std::uint64_t params_fingerprint(const std::vector<Parameter*>& params);

}  // namespace lsc::nn
