#include "lsc/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lsc {

Tensor::Tensor(std::vector<int> dims, double fill) : dims_(std::move(dims)) {
  LSC_CHECK(!dims_.empty() && dims_.size() <= 4, invalid_argument, "tensor rank must be 1..4");
  std::int64_t n = 1;
  for (int d : dims_) {
    LSC_CHECK(d > 0, invalid_argument, "tensor dims must be positive");
    n *= d;
  }
  data_.assign(static_cast<std::size_t>(n), fill);
}

Tensor Tensor::hwc(int h, int w, int c, double fill) { return Tensor({h, w, c}, fill); }

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t[0] = v;
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t({static_cast<int>(values.size())});
  std::copy(values.begin(), values.end(), t.data_.begin());
  return t;
}

int Tensor::h() const {
  LSC_CHECK(rank() == 3, shape_mismatch, "h() requires rank-3 tensor, got " + shape_str());
  return dims_[0];
}
int Tensor::w() const {
  LSC_CHECK(rank() == 3, shape_mismatch, "w() requires rank-3 tensor, got " + shape_str());
  return dims_[1];
}
int Tensor::c() const {
  LSC_CHECK(rank() == 3, shape_mismatch, "c() requires rank-3 tensor, got " + shape_str());
  return dims_[2];
}

double& Tensor::at(int i, int j, int k) {
  return data_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
}
double Tensor::at(int i, int j, int k) const {
  return data_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << "x";
    os << dims_[i];
  }
  os << ")";
  return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::min() const {
  LSC_CHECK(!data_.empty(), invalid_argument, "min() of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}
double Tensor::max() const {
  LSC_CHECK(!data_.empty(), invalid_argument, "max() of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Tensor& Tensor::operator+=(const Tensor& o) {
  LSC_CHECK(same_shape(o), shape_mismatch, "+= shapes " + shape_str() + " vs " + o.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_shape(const Tensor& t, const std::vector<int>& dims, const std::string& what) {
  if (t.dims() != dims) {
    Tensor probe(dims);
    fail(Error::Kind::shape_mismatch, what + ": expected " + probe.shape_str() + ", got " + t.shape_str());
  }
}

}  // namespace lsc
