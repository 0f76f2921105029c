#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfa {

/// Dense NCHW tensor of doubles. Batches, feature maps and single heatmaps
/// all use this layout; a lone map is a batch of one.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(int n, int c, int h, int w, double fill = 0.0)
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  /// Pointer to the [h, w] plane of (n, c).
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }
  /// Pointer to sample n's [c, h, w] block.
  double* sample(int n) { return data_.data() + index(n, 0, 0, 0); }
  const double* sample(int n) const { return data_.data() + index(n, 0, 0, 0); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  /// Copy of sample i as a batch of one.
  Tensor slice(int i) const;
  /// Stack equally shaped batches along n.
  static Tensor concat(std::span<const Tensor> parts);

 private:
  Shape shape_{};
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);

/// Throws ShapeError with `what` prefixed when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace cfa
