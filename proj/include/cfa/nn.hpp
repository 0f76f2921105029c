#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfa/tensor.hpp"

namespace cfa::nn {

/// Named tensor owned by a layer. Buffers (running statistics) have
/// `trainable == false` and never receive gradients.
struct Param {
  mutable std::string name;  // assigned by collect()
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

/// Train uses batch statistics, updates running statistics and records what
/// backward() needs. Eval uses running statistics; backward() is still
/// available afterwards.
enum class Mode { Train, Eval };

using Rng = std::mt19937_64;

void zero_grads(const ParamList& params);
std::size_t count_trainable(const ConstParamList& params);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, bool bias);

  /// He-normal weights scaled by fan-in, zero bias.
  void init_he(Rng& rng);
  void init_normal(Rng& rng, double stddev);
  /// Identity map; requires in == out and kernel == 1.
  void init_identity();
  void init_zero();

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  Shape output_shape(const Shape& in) const;
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Param weight;  // [out, in, k, k]
  Param bias;    // [1, out, 1, 1], unused when has_bias_ is false

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Tensor input_;
};

/// Transposed convolution (gradient of Conv2d with respect to its input).
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, int stride, int pad, bool bias);

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  Shape output_shape(const Shape& in) const;

  Param weight;  // [in, out, k, k]
  Param bias;

 private:
  int in_ = 0, out_ = 0, k_ = 4, stride_ = 2, pad_ = 1;
  bool has_bias_ = false;
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, ParamList& out);

  Param gamma, beta;
  Param running_mean, running_var;

 private:
  int channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Mode last_mode_ = Mode::Eval;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

/// Rectifier. With `pass_at_zero` the gradient also flows where the input is
/// exactly zero, which lets a zero-initialised map in front of it learn.
class ReLU {
 public:
  explicit ReLU(bool pass_at_zero = false) : pass_at_zero_(pass_at_zero) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  bool pass_at_zero_ = false;
  Tensor input_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Shape in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

}  // namespace cfa::nn
