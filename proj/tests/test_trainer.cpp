#include <algorithm>
#include <gtest/gtest.h>

#include <cstdlib>

#include "cfa/errors.hpp"
#include "cfa/synthdata.hpp"
#include "cfa/trainer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cfa;
using namespace cfa::testing;

namespace {

std::vector<PoseSample> tiny_dataset(int count, std::uint64_t seed = 1) {
  SynthConfig c;
  c.seed = seed;
  c.count = count;
  c.image_size = 64;
  return generate_dataset(c);
}

TrainConfig quick(int epochs, int batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.lr = 2e-3;
  t.lr_decay_epochs = {};
  t.seed = 5;
  return t;
}

std::vector<double> flat_params(Cascade& m) {
  std::vector<double> out;
  for (nn::Param* p : m.parameters()) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

VisibilityMask all_visible(int n, int p) { return VisibilityMask(n, std::vector<bool>(p, true)); }

}  // namespace

TEST(Loss, ZeroWhenStagesMatchTarget) {
  std::mt19937_64 g(1);
  Tensor t = random_tensor({2, 4, 5, 5}, g);
  LossResult r = heatmap_loss({t, t}, t, {1, 1}, all_visible(2, 4));
  EXPECT_EQ(r.value, 0.0);
  for (const Tensor& d : r.d_stages)
    for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(Loss, ConstantResidual) {
  Tensor t(1, 16, 6, 6, 0.3);
  Tensor y(1, 16, 6, 6, 0.4);
  EXPECT_NEAR(heatmap_loss({y}, t, {1.0}, all_visible(1, 16)).value, 0.01, 1e-15);
}

TEST(Loss, MatchesScalarLoopOracle) {
  std::mt19937_64 g(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> stages{random_tensor({3, 5, 4, 6}, g), random_tensor({3, 5, 4, 6}, g),
                               random_tensor({3, 5, 4, 6}, g)};
    Tensor t = random_tensor({3, 5, 4, 6}, g);
    std::vector<double> w{0.5, 0.0, 2.0};
    VisibilityMask vis(3, std::vector<bool>(5));
    std::bernoulli_distribution b(0.6);
    for (auto& row : vis)
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = b(g);
    vis[0][0] = true;
    EXPECT_NEAR(heatmap_loss(stages, t, w, vis).value, oracle::heatmap_loss(stages, t, w, vis), 1e-10);
  }
}

TEST(Loss, InvisibleChannelsDoNotMatter) {
  std::mt19937_64 g(3);
  Tensor t = random_tensor({1, 3, 4, 4}, g), y = random_tensor({1, 3, 4, 4}, g);
  VisibilityMask vis{{true, false, true}};
  const double base = heatmap_loss({y}, t, {1}, vis).value;
  for (int v = 0; v < 4; ++v) y.at(0, 1, v, v) += 100;
  LossResult r = heatmap_loss({y}, t, {1}, vis);
  EXPECT_EQ(r.value, base);
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) EXPECT_EQ(r.d_stages[0].at(0, 1, v, u), 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 g(4);
  std::vector<Tensor> s{random_tensor({2, 3, 3, 3}, g), random_tensor({2, 3, 3, 3}, g)};
  Tensor t = random_tensor({2, 3, 3, 3}, g);
  VisibilityMask vis{{true, false, true}, {true, true, false}};
  std::vector<double> w{0.7, 1.3};
  LossResult r = heatmap_loss(s, t, w, vis);
  for (int j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = s[j][i], h = 1e-6;
      s[j][i] = keep + h;
      const double up = heatmap_loss(s, t, w, vis).value;
      s[j][i] = keep - h;
      const double down = heatmap_loss(s, t, w, vis).value;
      s[j][i] = keep;
      EXPECT_NEAR(r.d_stages[j][i], (up - down) / (2 * h), 1e-8);
    }
}

TEST(Loss, Errors) {
  Tensor t(1, 2, 3, 3);
  EXPECT_THROW(heatmap_loss({t}, t, {1}, {{false, false}}), DomainError);
  EXPECT_THROW(heatmap_loss({t}, t, {0}, all_visible(1, 2)), DomainError);
  EXPECT_THROW(heatmap_loss({t, t}, t, {1}, all_visible(1, 2)), DomainError);
}

TEST(Schedule, DefaultsDecayAfterListedEpochs) {
  TrainConfig c;
  const std::vector<double> expect{5e-4, 5e-4, 5e-4, 5e-4, 5e-4, 5e-4, 1.5e-4, 1.5e-4,
                                   1.5e-4, 1.5e-4, 4.5e-5, 4.5e-5, 4.5e-5, 1.35e-5, 1.35e-5,
                                   1.35e-5, 1.35e-5};
  for (int e = 1; e <= static_cast<int>(expect.size()); ++e)
    EXPECT_NEAR(lr_at_epoch(c, e), expect[e - 1], 1e-18) << "epoch " << e;
  double prev = lr_at_epoch(c, 1);
  for (int e = 2; e < 40; ++e) {
    EXPECT_LE(lr_at_epoch(c, e), prev);
    prev = lr_at_epoch(c, e);
  }
}

TEST(Schedule, ConfigCheck) {
  TrainConfig c;
  EXPECT_TRUE(c.check().empty());
  c.lr_decay_factor = 1.0;
  EXPECT_FALSE(c.check().empty());
  c = TrainConfig{};
  c.lr = 0;
  EXPECT_FALSE(c.check().empty());
  c = TrainConfig{};
  c.stage_loss_weights = {0, 0};
  EXPECT_FALSE(c.check().empty());
  c = TrainConfig{};
  c.augment_ranges.min_scale = 1.5;
  EXPECT_FALSE(c.check().empty());
  c = TrainConfig{};
  c.augment_ranges.flip_prob = 1.2;
  EXPECT_FALSE(c.check().empty());
}

TEST(Training, FlipOnlyAugmentationKeepsPixelsOrMirrorsThem) {
  SynthConfig sc;
  sc.count = 1;
  sc.image_size = 32;
  const PoseSample s = generate_dataset(sc).front();
  AugmentRanges r;
  r.max_rotation = 0;
  r.min_scale = r.max_scale = 1;
  r.color = 0;
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    const AugmentParams p = sample_augment(rng, r);
    EXPECT_EQ(p.rotation, 0.0);
    EXPECT_EQ(p.scale, 1.0);
    EXPECT_EQ(p.brightness, 0.0);
    const PoseSample a = augment(s, p);
    const PoseSample back = p.flip ? augment(a, p) : a;
    EXPECT_TRUE(std::ranges::equal(back.image.values(), s.image.values()));
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::Param p;
  p.value = Tensor(1, 1, 1, 3);
  p.grad = Tensor(1, 1, 1, 3);
  p.grad[0] = 2.0;
  p.grad[1] = -0.01;
  Adam adam;
  adam.step({&p}, 0.1);
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value[0], -0.1, 1e-8);
  EXPECT_NEAR(p.value[1], 0.1, 1e-6);
  EXPECT_EQ(p.value[2], 0.0);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  Cascade m(mini_cascade_config(2, 64), 6);
  const auto before = flat_params(m);
  TrainLog log = train(m, tiny_dataset(4), quick(0, 2));
  EXPECT_TRUE(log.iterations.empty());
  EXPECT_EQ(flat_params(m), before);
}

TEST(Train, LogAndCallback) {
  Cascade m(mini_cascade_config(2, 64), 7);
  TrainConfig c = quick(2, 3);
  c.lr_decay_epochs = {1};
  std::vector<int> seen;
  TrainLog log = train(m, tiny_dataset(5), c, [&](Cascade&, int e) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2}));
  ASSERT_EQ(log.iterations.size(), 4u);
  EXPECT_EQ(log.iterations[3].iteration, 4);
  EXPECT_EQ(log.epochs[1].lr, c.lr * c.lr_decay_factor);
  const std::string text = log.text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(text.rfind("1, 1, ", 0), 0u);
}

TEST(Train, MaxIterationsCapsRun) {
  Cascade m(mini_cascade_config(1, 64), 8);
  TrainConfig c = quick(50, 2);
  c.max_iterations = 3;
  EXPECT_EQ(train(m, tiny_dataset(4), c).iterations.size(), 3u);
}

TEST(Train, SeededRunsAreIdentical) {
  const auto data = tiny_dataset(6);
  TrainConfig c = quick(2, 4);
  Cascade a(mini_cascade_config(2, 64), 9), b(mini_cascade_config(2, 64), 9);
  TrainLog la = train(a, data, c);
  TrainLog lb = train(b, data, c);
  EXPECT_EQ(la.text(), lb.text());
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Train, WorkerCountDoesNotChangeResult) {
  const auto data = tiny_dataset(6);
  TrainConfig c = quick(1, 6);
  Cascade a(mini_cascade_config(1, 64), 10), b(mini_cascade_config(1, 64), 10);
  train(a, data, c);
  c.num_workers = 3;
  train(b, data, c);
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Train, DivergenceIsReported) {
  Cascade m(mini_cascade_config(1, 64), 11);
  TrainConfig c = quick(20, 2);
  c.lr = 1e300;
  c.augment = false;
  EXPECT_THROW(train(m, tiny_dataset(4), c), TrainingDiverged);
}

TEST(Train, RejectsBadInputs) {
  Cascade m(mini_cascade_config(2, 64), 12);
  EXPECT_THROW(train(m, {}, quick(1, 2)), DomainError);
  TrainConfig c = quick(1, 2);
  c.stage_loss_weights = {1, 1, 1};
  EXPECT_THROW(train(m, tiny_dataset(2), c), DomainError);
}

// Mini 2-stage cascade, 16 samples, 300 iterations: the loss falls by 10x.
TEST(Train, OverfitsSmallDataset) {
  const auto data = tiny_dataset(16, 3);
  Cascade m(mini_cascade_config(2, 64), 13);
  TrainConfig c = quick(300, 16);
  c.augment = false;
  TrainLog log = train(m, data, c);
  ASSERT_EQ(log.iterations.size(), 300u);
  const double first = log.epochs.front().mean_loss, last = log.epochs.back().mean_loss;
  EXPECT_LT(last, 0.1 * first) << "initial " << first << " final " << last;
}

TEST(Evaluate, PerfectMapsScoreOne) {
  const auto data = tiny_dataset(6);
  const HeatmapGeometry g = HeatmapGeometry::for_image(64);
  std::vector<std::vector<Heatmap>> maps;
  std::vector<PersonAnnotation> gts;
  for (const auto& s : data) {
    Heatmap hm = encode(s.annotation.keypoints, s.annotation.visibility, g);
    maps.push_back({hm, hm, hm});
    gts.push_back(s.annotation);
  }
  EvalConfig ec;
  ec.fusion_window = 2;
  EvalResult r = score_stage_maps(maps, gts, ec, mpii_skeleton());
  ASSERT_EQ(r.per_stage.size(), 3u);
  for (const auto& s : r.per_stage) EXPECT_EQ(s.total, 1.0);
  EXPECT_EQ(r.fused.total, 1.0);
  EXPECT_EQ(r.predictions.size(), 6u);
}

TEST(Evaluate, FusionIgnoresStagesOutsideWindow) {
  const auto data = tiny_dataset(6);
  const HeatmapGeometry g = HeatmapGeometry::for_image(64);
  std::mt19937_64 rng(14);
  std::vector<std::vector<Heatmap>> clean, poisoned;
  std::vector<PersonAnnotation> gts;
  for (const auto& s : data) {
    Heatmap good = encode(s.annotation.keypoints, s.annotation.visibility, g);
    Heatmap noisy = good;
    for (double& v : noisy.tensor().values()) v += std::uniform_real_distribution<double>(0, 0.3)(rng);
    Heatmap junk(Tensor(random_tensor({1, 16, 16, 16}, rng, 0.0, 5.0)));
    clean.push_back({good, noisy, good});
    poisoned.push_back({junk, noisy, good});
    gts.push_back(s.annotation);
  }
  EvalConfig ec;
  ec.fusion_window = 2;
  EvalResult a = score_stage_maps(clean, gts, ec, mpii_skeleton());
  EvalResult b = score_stage_maps(poisoned, gts, ec, mpii_skeleton());
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.fused.total, b.fused.total);
  EXPECT_LT(b.per_stage[0].total, a.per_stage[0].total);
}

TEST(Evaluate, FlipTestAveragesMirroredPrediction) {
  Cascade m(mini_cascade_config(2, 64), 15);
  randomize_params(m.parameters(), 16);
  const auto data = tiny_dataset(3);
  std::vector<Tensor> images;
  for (const auto& s : data) images.push_back(s.image);
  auto with_flip = infer_stage_maps(m, images, true, mpii_skeleton());
  for (std::size_t i = 0; i < images.size(); ++i) {
    CascadeOutput plain = m.forward(images[i], nn::Mode::Eval);
    CascadeOutput mirrored = m.forward(mirror_image(images[i]), nn::Mode::Eval);
    for (int j = 0; j < 2; ++j) {
      auto expect = oracle::flip_average(oracle::flat(plain.stage_heatmap(j, 0)),
                                         oracle::flat(mirrored.stage_heatmap(j, 0)), 16, 16, 16,
                                         mpii_skeleton().flip_pairs);
      auto got = oracle::flat(with_flip[i][j]);
      for (std::size_t k = 0; k < got.size(); ++k) ASSERT_NEAR(got[k], expect[k], 1e-12);
    }
  }
}

TEST(Evaluate, MirrorImageIsInvolution) {
  std::mt19937_64 g(17);
  Tensor img = random_tensor({1, 3, 8, 6}, g);
  Tensor m = mirror_image(img);
  EXPECT_EQ(m.at(0, 1, 2, 0), img.at(0, 1, 2, 5));
  Tensor back = mirror_image(m);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], img[i]);
}

TEST(Workers, EnvironmentCapsRequest) {
  setenv("CFA_NUM_WORKERS", "2", 1);
  EXPECT_EQ(workers_from_env(8), 2);
  EXPECT_EQ(workers_from_env(1), 1);
  unsetenv("CFA_NUM_WORKERS");
  EXPECT_EQ(workers_from_env(3), 3);
}
