#include "cfa/tensor.hpp"

#include <algorithm>

#include "cfa/errors.hpp"

namespace cfa {

std::string Shape::str() const {
  return "[" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension " + shape.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor Tensor::slice(int i) const {
  Tensor out(1, shape_.c, shape_.h, shape_.w);
  std::copy_n(sample(i), out.size(), out.data());
  return out;
}

Tensor Tensor::concat(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw ShapeError("concat of mismatched shapes " + s.str() + " and " +
                       p.shape().str());
    }
    total += p.n();
  }
  s.n = total;
  Tensor out(s);
  double* dst = out.data();
  for (const Tensor& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(what + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace cfa
