#include "cfa/nn.hpp"

#include <cmath>

#include <Eigen/Core>

#include "cfa/errors.hpp"

namespace cfa::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct Window {
  int k, stride, pad;
};

// Unfold an image [C, H, W] into columns [C*k*k, Ho*Wo] for a convolution
// producing an Ho x Wo grid.
void im2col(const double* img, int c, int h, int w, Window win, int ho, int wo, double* col) {
  const int k = win.k;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * win.stride - win.pad + ki;
          double* dst = row + static_cast<std::size_t>(oh) * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(ch) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * win.stride - win.pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an image.
void col2im(const double* col, int c, int h, int w, Window win, int ho, int wo, double* img) {
  const int k = win.k;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * win.stride - win.pad + ki;
          if (ih < 0 || ih >= h) continue;
          const double* src = row + static_cast<std::size_t>(oh) * wo;
          double* dst = img + (static_cast<std::size_t>(ch) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * win.stride - win.pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
}

Param make_param(Shape shape, bool trainable = true) {
  Param p;
  p.value = Tensor(shape);
  if (trainable) p.grad = Tensor(shape);
  p.trainable = trainable;
  return p;
}

void push(const std::string& prefix, const char* leaf, Param& p, ParamList& out) {
  p.name = prefix + "." + leaf;
  out.push_back(&p);
}

}  // namespace

void zero_grads(const ParamList& params) {
  for (Param* p : params) {
    if (p->trainable) p->grad.fill(0.0);
  }
}

std::size_t count_trainable(const ConstParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, bool bias)
    : weight(make_param({out, in, kernel, kernel})),
      bias(make_param({1, out, 1, 1}, bias)),
      in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
  if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
    throw ShapeError("invalid convolution geometry");
  }
}

void Conv2d::init_he(Rng& rng) {
  fill_normal(weight.value, rng, std::sqrt(2.0 / (in_ * k_ * k_)));
  bias.value.fill(0.0);
}

void Conv2d::init_normal(Rng& rng, double stddev) {
  fill_normal(weight.value, rng, stddev);
  bias.value.fill(0.0);
}

void Conv2d::init_identity() {
  if (in_ != out_ || k_ != 1) throw ShapeError("identity init needs a square 1x1 map");
  weight.value.fill(0.0);
  for (int i = 0; i < out_; ++i) weight.value.at(i, i, 0, 0) = 1.0;
  bias.value.fill(0.0);
}

void Conv2d::init_zero() {
  weight.value.fill(0.0);
  bias.value.fill(0.0);
}

Shape Conv2d::output_shape(const Shape& in) const {
  if (in.c != in_) {
    throw ShapeError("conv expects " + std::to_string(in_) + " input channels, got " +
                     in.str());
  }
  const int ho = (in.h + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (in.w + 2 * pad_ - k_) / stride_ + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv input too small: " + in.str());
  return {in.n, out_, ho, wo};
}

Tensor Conv2d::forward(const Tensor& x) {
  const Shape os = output_shape(x.shape());
  input_ = x;
  Tensor y(os);
  const int ckk = in_ * k_ * k_;
  const int hw = os.h * os.w;
  const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * hw);
  CMapRM wmat(weight.value.data(), out_, ckk);
  for (int n = 0; n < x.n(); ++n) {
    const double* cols = x.sample(n);
    if (!pointwise) {
      im2col(x.sample(n), in_, x.h(), x.w(), {k_, stride_, pad_}, os.h, os.w, col.data());
      cols = col.data();
    }
    MapRM ymat(y.sample(n), out_, hw);
    ymat.noalias() = wmat * CMapRM(cols, ckk, hw);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias.value[o];
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = input_;
  const Shape os = output_shape(x.shape());
  require_same_shape(dy, Tensor(os), "conv backward");
  Tensor dx(x.shape());
  const int ckk = in_ * k_ * k_;
  const int hw = os.h * os.w;
  const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * hw);
  std::vector<double> dcol(static_cast<std::size_t>(ckk) * hw);
  CMapRM wmat(weight.value.data(), out_, ckk);
  MapRM dw(weight.grad.data(), out_, ckk);
  for (int n = 0; n < x.n(); ++n) {
    const double* cols = x.sample(n);
    if (!pointwise) {
      im2col(x.sample(n), in_, x.h(), x.w(), {k_, stride_, pad_}, os.h, os.w, col.data());
      cols = col.data();
    }
    CMapRM dymat(dy.sample(n), out_, hw);
    dw.noalias() += dymat * CMapRM(cols, ckk, hw).transpose();
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) bias.grad[o] += dymat.row(o).sum();
    }
    if (pointwise) {
      MapRM(dx.sample(n), ckk, hw).noalias() = wmat.transpose() * dymat;
    } else {
      MapRM(dcol.data(), ckk, hw).noalias() = wmat.transpose() * dymat;
      col2im(dcol.data(), in_, x.h(), x.w(), {k_, stride_, pad_}, os.h, os.w, dx.sample(n));
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) {
  push(prefix, "weight", weight, out);
  if (has_bias_) push(prefix, "bias", bias, out);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in, int out, int kernel, int stride, int pad, bool bias)
    : weight(make_param({in, out, kernel, kernel})),
      bias(make_param({1, out, 1, 1}, bias)),
      in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
  if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
    throw ShapeError("invalid deconvolution geometry");
  }
}

void ConvTranspose2d::init_he(Rng& rng) {
  const double fan_in = static_cast<double>(in_) * k_ * k_ / (stride_ * stride_);
  fill_normal(weight.value, rng, std::sqrt(2.0 / fan_in));
  bias.value.fill(0.0);
}

Shape ConvTranspose2d::output_shape(const Shape& in) const {
  if (in.c != in_) {
    throw ShapeError("deconv expects " + std::to_string(in_) + " input channels, got " +
                     in.str());
  }
  return {in.n, out_, (in.h - 1) * stride_ - 2 * pad_ + k_,
          (in.w - 1) * stride_ - 2 * pad_ + k_};
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  const Shape os = output_shape(x.shape());
  input_ = x;
  Tensor y(os);
  const int ckk = out_ * k_ * k_;
  const int hw = x.h() * x.w();
  std::vector<double> col(static_cast<std::size_t>(ckk) * hw);
  CMapRM wmat(weight.value.data(), in_, ckk);
  for (int n = 0; n < x.n(); ++n) {
    MapRM(col.data(), ckk, hw).noalias() = wmat.transpose() * CMapRM(x.sample(n), in_, hw);
    col2im(col.data(), out_, os.h, os.w, {k_, stride_, pad_}, x.h(), x.w(), y.sample(n));
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) {
        double* pl = y.plane(n, o);
        for (int i = 0; i < os.h * os.w; ++i) pl[i] += bias.value[o];
      }
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  const Tensor& x = input_;
  const Shape os = output_shape(x.shape());
  require_same_shape(dy, Tensor(os), "deconv backward");
  Tensor dx(x.shape());
  const int ckk = out_ * k_ * k_;
  const int hw = x.h() * x.w();
  std::vector<double> dcol(static_cast<std::size_t>(ckk) * hw);
  CMapRM wmat(weight.value.data(), in_, ckk);
  MapRM dw(weight.grad.data(), in_, ckk);
  for (int n = 0; n < x.n(); ++n) {
    im2col(dy.sample(n), out_, os.h, os.w, {k_, stride_, pad_}, x.h(), x.w(), dcol.data());
    CMapRM dcm(dcol.data(), ckk, hw);
    MapRM(dx.sample(n), in_, hw).noalias() = wmat * dcm;
    dw.noalias() += CMapRM(x.sample(n), in_, hw) * dcm.transpose();
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) {
        const double* pl = dy.plane(n, o);
        double s = 0.0;
        for (int i = 0; i < os.h * os.w; ++i) s += pl[i];
        bias.grad[o] += s;
      }
    }
  }
  return dx;
}

void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) {
  push(prefix, "weight", weight, out);
  if (has_bias_) push(prefix, "bias", bias, out);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : gamma(make_param({1, channels, 1, 1})),
      beta(make_param({1, channels, 1, 1})),
      running_mean(make_param({1, channels, 1, 1}, false)),
      running_var(make_param({1, channels, 1, 1}, false)),
      channels_(channels), momentum_(momentum), eps_(eps) {
  gamma.value.fill(1.0);
  running_var.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  if (x.c() != channels_) {
    throw ShapeError("batch norm expects " + std::to_string(channels_) + " channels, got " +
                     x.shape().str());
  }
  last_mode_ = mode;
  const int n = x.n(), hw = x.h() * x.w();
  const double count = static_cast<double>(n) * hw;
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* pl = x.plane(b, c);
        for (int i = 0; i < hw; ++i) s += pl[i];
      }
      mean = s / count;
      double ss = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* pl = x.plane(b, c);
        for (int i = 0; i < hw; ++i) ss += (pl[i] - mean) * (pl[i] - mean);
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      running_mean.value[c] = (1 - momentum_) * running_mean.value[c] + momentum_ * mean;
      running_var.value[c] = (1 - momentum_) * running_var.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const double g = gamma.value[c], bt = beta.value[c];
    for (int b = 0; b < n; ++b) {
      const double* src = x.plane(b, c);
      double* xh = xhat_.plane(b, c);
      double* dst = y.plane(b, c);
      for (int i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean) * inv;
        dst[i] = g * xh[i] + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  require_same_shape(dy, xhat_, "batch norm backward");
  const int n = dy.n(), hw = dy.h() * dy.w();
  const double count = static_cast<double>(n) * hw;
  Tensor dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const double* d = dy.plane(b, c);
      const double* xh = xhat_.plane(b, c);
      for (int i = 0; i < hw; ++i) {
        sum_dy += d[i];
        sum_dy_xhat += d[i] * xh[i];
      }
    }
    beta.grad[c] += sum_dy;
    gamma.grad[c] += sum_dy_xhat;
    const double scale = gamma.value[c] * inv_std_[c];
    for (int b = 0; b < n; ++b) {
      const double* d = dy.plane(b, c);
      const double* xh = xhat_.plane(b, c);
      double* out = dx.plane(b, c);
      if (last_mode_ == Mode::Train) {
        for (int i = 0; i < hw; ++i) {
          out[i] = scale * (d[i] - sum_dy / count - xh[i] * sum_dy_xhat / count);
        }
      } else {
        for (int i = 0; i < hw; ++i) out[i] = scale * d[i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) {
  push(prefix, "gamma", gamma, out);
  push(prefix, "beta", beta, out);
  push(prefix, "running_mean", running_mean, out);
  push(prefix, "running_var", running_var, out);
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
  require_same_shape(dy, input_, "relu backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double v = input_[i];
    const bool open = pass_at_zero_ ? v >= 0.0 : v > 0.0;
    if (!open) dx[i] = 0.0;
  }
  return dx;
}

// -------------------------------------------------------------- MaxPool2

Tensor MaxPool2::forward(const Tensor& x) {
  in_shape_ = x.shape();
  const int ho = x.h() / 2, wo = x.w() / 2;
  if (ho == 0 || wo == 0) throw ShapeError("max pool input too small: " + x.shape().str());
  Tensor y(x.n(), x.c(), ho, wo);
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* pl = x.plane(n, c);
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>(2 * i * x.w() + 2 * j);
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const auto idx = static_cast<std::uint32_t>((2 * i + di) * x.w() + 2 * j + dj);
              if (pl[idx] > pl[best]) best = idx;
            }
          }
          argmax_[o] = best;
          y[o] = pl[best];
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) const {
  Tensor dx(in_shape_);
  const int planes = in_shape_.n * in_shape_.c;
  const std::size_t out_plane = static_cast<std::size_t>(dy.h()) * dy.w();
  const std::size_t in_plane = static_cast<std::size_t>(in_shape_.h) * in_shape_.w;
  for (int pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < out_plane; ++i) {
      const std::size_t o = pl * out_plane + i;
      dx[pl * in_plane + argmax_[o]] += dy[o];
    }
  }
  return dx;
}

}  // namespace cfa::nn
