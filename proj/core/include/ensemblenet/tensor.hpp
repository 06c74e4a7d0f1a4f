#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace enet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// NCHW dimensions.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image_size() const { return static_cast<std::size_t>(c) * h * w; }

  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense 4-d tensor in NCHW layout with double storage. Parameters use the
/// same type with n = output channels (conv), or a 1x1 spatial extent.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  /// Pointer to the start of image n.
  double* image(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.image_size(); }
  const double* image(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.image_size();
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(Shape shape) {
    shape_ = shape;
    data_.assign(shape.numel(), 0.0);
  }

  Tensor& operator+=(const Tensor& other);

  /// View as a (n) x (c*h*w) matrix.
  Eigen::Map<Matrix> as_matrix() {
    return {data_.data(), shape_.n, static_cast<Eigen::Index>(shape_.image_size())};
  }
  Eigen::Map<const Matrix> as_matrix() const {
    return {data_.data(), shape_.n, static_cast<Eigen::Index>(shape_.image_size())};
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_{};
  std::vector<double> data_;
};

}  // namespace enet
