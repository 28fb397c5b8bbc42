#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace spectralseg {

// Dense row-major double tensor. Activations use the layout [B, C, H, W];
// parameters use whatever rank fits ([Cout, Cin, kh, kw] for conv kernels,
// [C] for per-channel affine terms). Construction zero-fills; `uninit` skips
// the fill for buffers every element of which is about to be written.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : Tensor(std::move(shape), true) {}
  Tensor(int b, int c, int h, int w) : Tensor(std::vector<int>{b, c, h, w}) {}

  static Tensor uninit(std::vector<int> shape) { return Tensor(std::move(shape), false); }
  static Tensor uninit(int b, int c, int h, int w) { return uninit(std::vector<int>{b, c, h, w}); }
  static Tensor zeros_like(const Tensor& other);
  static Tensor uninit_like(const Tensor& other) { return uninit(other.shape_); }

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return n_; }
  bool empty() const { return n_ == 0; }

  double* data() { return v_.get(); }
  const double* data() const { return v_.get(); }

  double& operator[](std::int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return v_[static_cast<size_t>(i)]; }

  // [B, C, H, W] accessor; only valid for rank-4 tensors.
  double& at(int b, int c, int h, int w) {
    return v_[static_cast<size_t>(((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(int b, int c, int h, int w) const {
    return v_[static_cast<size_t>(((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(double value);
  void zero() { fill(0.0); }
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

 private:
  Tensor(std::vector<int> shape, bool zero_fill);

  std::vector<int> shape_;
  std::int64_t n_ = 0;
  std::unique_ptr<double[]> v_;
};

// Throws std::invalid_argument when `t` contains NaN or Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace spectralseg
