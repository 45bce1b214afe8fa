#pragma once

#include <cmath>

namespace lsc::nn {

// Shared scalar kernels. The autodiff ops and the tape-free coder paths
// both call these, so sequential decoding reproduces training-time math
// exactly.

inline double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double leaky_relu_scalar(double x, double slope) { return x > 0.0 ? x : slope * x; }

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace lsc::nn
