#include <gtest/gtest.h>

#include <functional>

#include "cfa/nn.hpp"
#include "test_support.hpp"

using namespace cfa;
using cfa::testing::random_tensor;

namespace {

// L = sum(forward(x) * r); compares backward() against central differences
// for every input entry and every parameter entry.
void check_layer(const std::function<Tensor(const Tensor&)>& fwd,
                 const std::function<Tensor(const Tensor&)>& bwd, nn::ParamList params,
                 Tensor x, std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  Tensor y = fwd(x);
  Tensor r = random_tensor(y.shape(), rng);
  auto loss = [&] {
    Tensor o = fwd(x);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * r[i];
    return s;
  };
  nn::zero_grads(params);
  fwd(x);
  Tensor dx = bwd(r);
  ASSERT_EQ(dx.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    const double h = 1e-6;
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    EXPECT_NEAR(dx[i], (up - down) / (2 * h), tol) << "input " << i;
  }
  for (nn::Param* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double numeric = cfa::testing::central_difference(p, i, loss);
      EXPECT_NEAR(p->grad[i], numeric, tol) << p->name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  nn::Rng rng(1);
  nn::Conv2d conv(3, 4, 3, 2, 1, true);
  conv.init_he(rng);
  nn::ParamList ps;
  conv.collect("conv", ps);
  for (double& v : conv.bias.value.values()) v = 0.3;
  check_layer([&](const Tensor& x) { return conv.forward(x); },
              [&](const Tensor& d) { return conv.backward(d); }, ps,
              random_tensor({2, 3, 7, 6}, rng), 11);
}

TEST(Conv2d, OutputShape) {
  nn::Conv2d conv(3, 8, 7, 2, 3, false);
  EXPECT_EQ(conv.output_shape({2, 3, 96, 96}), (Shape{2, 8, 48, 48}));
}

TEST(Conv2d, IdentityInitIsIdentity) {
  nn::Rng rng(2);
  nn::Conv2d conv(5, 5, 1, 1, 0, false);
  conv.init_identity();
  Tensor x = random_tensor({2, 5, 4, 3}, rng);
  Tensor y = conv.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ConvTranspose2d, GradientsMatchFiniteDifferences) {
  nn::Rng rng(3);
  nn::ConvTranspose2d up(3, 2, 4, 2, 1, true);
  up.init_he(rng);
  nn::ParamList ps;
  up.collect("up", ps);
  check_layer([&](const Tensor& x) { return up.forward(x); },
              [&](const Tensor& d) { return up.backward(d); }, ps,
              random_tensor({2, 3, 3, 4}, rng), 12);
}

TEST(ConvTranspose2d, DoublesResolution) {
  nn::Rng rng(4);
  nn::ConvTranspose2d up(4, 2, 4, 2, 1, false);
  up.init_he(rng);
  EXPECT_EQ(up.forward(random_tensor({1, 4, 3, 5}, rng)).shape(), (Shape{1, 2, 6, 10}));
}

// A transposed convolution is the adjoint of the convolution sharing its
// weights: <conv(x), y> == <x, deconv(y)>.
TEST(ConvTranspose2d, IsAdjointOfConv) {
  nn::Rng rng(5);
  nn::Conv2d conv(2, 3, 4, 2, 1, false);
  conv.init_he(rng);
  nn::ConvTranspose2d up(3, 2, 4, 2, 1, false);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 2; ++i)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) up.weight.value.at(o, i, a, b) = conv.weight.value.at(o, i, a, b);
  Tensor x = random_tensor({1, 2, 8, 6}, rng);
  Tensor y = random_tensor({1, 3, 4, 3}, rng);
  Tensor cx = conv.forward(x);
  Tensor uy = up.forward(y);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * uy[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(BatchNorm2d, TrainGradientsMatchFiniteDifferences) {
  nn::Rng rng(6);
  nn::BatchNorm2d bn(3);
  for (double& v : bn.gamma.value.values()) v = 0.7;
  for (double& v : bn.beta.value.values()) v = -0.2;
  nn::ParamList ps;
  bn.collect("bn", ps);
  check_layer([&](const Tensor& x) { return bn.forward(x, nn::Mode::Train); },
              [&](const Tensor& d) { return bn.backward(d); }, ps,
              random_tensor({3, 3, 2, 2}, rng), 13);
}

TEST(BatchNorm2d, EvalGradientsMatchFiniteDifferences) {
  nn::Rng rng(7);
  nn::BatchNorm2d bn(2);
  for (double& v : bn.running_mean.value.values()) v = 0.4;
  for (double& v : bn.running_var.value.values()) v = 2.5;
  nn::ParamList ps;
  bn.collect("bn", ps);
  check_layer([&](const Tensor& x) { return bn.forward(x, nn::Mode::Eval); },
              [&](const Tensor& d) { return bn.backward(d); }, ps,
              random_tensor({2, 2, 3, 3}, rng), 14);
}

TEST(BatchNorm2d, TrainNormalisesAndTracksStatistics) {
  nn::Rng rng(8);
  nn::BatchNorm2d bn(2);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, 2.0, 6.0);
  Tensor y = bn.forward(x, nn::Mode::Train);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0;
    int n = 0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 9; ++i) {
        m += y.plane(b, c)[i];
        v += y.plane(b, c)[i] * y.plane(b, c)[i];
        xm += x.plane(b, c)[i];
        ++n;
      }
    EXPECT_NEAR(m / n, 0.0, 1e-12);
    EXPECT_NEAR(v / n, 1.0, 1e-3);
    EXPECT_NEAR(bn.running_mean.value[c], 0.1 * xm / n, 1e-12);
  }
  EXPECT_FALSE(bn.running_mean.trainable);
}

TEST(ReLU, ForwardAndBackward) {
  nn::ReLU relu;
  Tensor x(1, 1, 1, 3);
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  Tensor y = relu.forward(x);
  EXPECT_EQ(y[0], 0);
  EXPECT_EQ(y[1], 0);
  EXPECT_EQ(y[2], 2);
  Tensor d = relu.backward(Tensor(1, 1, 1, 3, 1.0));
  EXPECT_EQ(d[0], 0);
  EXPECT_EQ(d[1], 0);
  EXPECT_EQ(d[2], 1);

  nn::ReLU leaky_zero(true);
  leaky_zero.forward(x);
  EXPECT_EQ(leaky_zero.backward(Tensor(1, 1, 1, 3, 1.0))[1], 1);
}

TEST(MaxPool2, RoutesGradientToMaximum) {
  nn::Rng rng(9);
  nn::MaxPool2 pool;
  Tensor x = random_tensor({2, 2, 4, 6}, rng);
  check_layer([&](const Tensor& in) { return pool.forward(in); },
              [&](const Tensor& d) { return pool.backward(d); }, {}, x, 15);
  EXPECT_EQ(pool.forward(x).shape(), (Shape{2, 2, 2, 3}));
}

TEST(Params, ZeroGradsAndCount) {
  nn::Conv2d conv(2, 3, 3, 1, 1, true);
  nn::BatchNorm2d bn(3);
  nn::ParamList ps;
  conv.collect("c", ps);
  bn.collect("b", ps);
  for (nn::Param* p : ps) p->grad.fill(5.0);
  nn::zero_grads(ps);
  for (nn::Param* p : ps)
    for (double g : p->grad.values()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(nn::count_trainable({ps.begin(), ps.end()}), 3u * 2 * 9 + 3 + 3 + 3);
}
