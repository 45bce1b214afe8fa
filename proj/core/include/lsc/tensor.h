#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsc {

class Error : public std::runtime_error {
 public:
  enum class Kind {
    invalid_argument,
    shape_mismatch,
    constraint,
    corrupt_stream,
    not_found,
    numeric,
    unsupported,
    insufficient_data,
  };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

[[noreturn]] inline void fail(Error::Kind kind, const std::string& msg) {
  throw Error(kind, msg);
}

#define LSC_CHECK(cond, kind, msg)                      \
  do {                                                  \
    if (!(cond)) ::lsc::fail(::lsc::Error::Kind::kind, (msg)); \
  } while (0)

/// Dense row-major tensor of doubles, rank 1..4.
///
/// Spatial data uses HWC layout (height, width, channels); convolution
/// weights use KKIO layout (kh, kw, cin, cout).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);
  static Tensor hwc(int h, int w, int c, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> values);

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rank-3 accessors.
  int h() const;
  int w() const;
  int c() const;
  double& at(int i, int j, int k);
  double at(int i, int j, int k) const;
  /// Channel row at a spatial site (rank-3 tensors).
  double* row(int i, int j) { return data_.data() + (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2]; }
  const double* row(int i, int j) const {
    return data_.data() + (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2];
  }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

 private:
  std::vector<int> dims_;
  std::vector<double> data_;
};

/// Shape guard used across module boundaries.
void require_shape(const Tensor& t, const std::vector<int>& dims, const std::string& what);

}  // namespace lsc
