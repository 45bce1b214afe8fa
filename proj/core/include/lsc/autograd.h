#pragma once

#include <functional>
#include <vector>

#include "lsc/tensor.h"

namespace lsc::nn {

/// Trainable tensor with an accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  std::string name;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : value(std::move(v)), grad(value.dims(), 0.0), name(std::move(n)) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode autodiff tape. One tape per forward pass; nodes are
/// append-only so creation order is a topological order.
class Tape {
 public:
  Var constant(Tensor v);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  Tensor& grad(Var v);
  bool requires_grad(Var v) const;

  /// Backpropagates from a scalar node; parameter gradients are
  /// accumulated into their Parameter::grad.
  void backward(Var root);

  std::size_t num_nodes() const { return nodes_.size(); }

  // Internal: used by op implementations.
  int emit(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> back, bool needs_grad);
  Tensor& node_grad_accum(int id);

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool grad_alloc = false;
    bool needs_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;

  friend class TapeAccess;
};

// ---- Elementwise and structural ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.01);
Var softplus(Var a);
Var tanh_op(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var pow_scalar(Var a, double p);  // requires positive input for non-integer p
Var exp_op(Var a);
Var log2_clamped(Var a, double floor);
Var crop_spatial(Var a, int h, int w);
Var sum(Var a);
Var mean(Var a);
Var concat_c(const std::vector<Var>& parts);
Var slice_c(Var a, int c0, int len);
Var sum_channels(Var a);  // H x W x C -> H x W x 1
Var global_avg_pool(Var a);
Var upsample_nearest(Var a, int r);
/// y[h,w,k] = a[k] * x[h,w,k] + b[k]; a and b are rank-1 of length C.
Var channel_affine(Var x, Var a, Var b);
Var mse(Var a, Var b);

// ---- Convolutions ----
/// x: H x W x Cin, w: kh x kw x (Cin/groups) x Cout, b: {Cout} or invalid Var for none.
Var conv2d(Var x, Var w, Var b, int stride, int pad, int groups = 1);
/// Transposed convolution; out = (H-1)*stride - 2*pad + kh + opad.
Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad, int opad);

// ---- Likelihood ----
/// Elementwise bits of a unit-width quantization bin under N(mu, sigma^2):
/// -log2( Phi((x-mu+0.5)/sigma) - Phi((x-mu-0.5)/sigma) ).
/// Differentiable in all three arguments.
Var gaussian_bin_bits(Var x, Var mu, Var sigma);

/// Tape-free version used by the coder; must match the op bit-for-bit.
double gaussian_bin_probability(double x, double mu, double sigma);

}  // namespace lsc::nn
