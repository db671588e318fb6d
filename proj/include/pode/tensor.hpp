#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pode {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Rank-1 and rank-2 tensors cover everything the networks need; a rank-2
/// tensor is read as [rows, cols] and a rank-1 tensor as a single row.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Last dimension.
  std::size_t cols() const noexcept { return shape_.back(); }
  /// Product of all but the last dimension.
  std::size_t rows() const noexcept { return data_.size() / shape_.back(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimension of size 0 in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace pode
