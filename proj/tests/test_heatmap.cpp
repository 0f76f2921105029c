#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cfa/errors.hpp"
#include "cfa/heatmap.hpp"
#include "oracles.hpp"

using namespace cfa;

namespace {

Heatmap random_map(int p, int h, int w, std::mt19937_64& rng) {
  Heatmap m(p, h, w);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (double& v : m.tensor().values()) v = d(rng);
  return m;
}

HeatmapGeometry geom(int hw, int stride, double sigma) { return {hw, hw, stride, sigma}; }

}  // namespace

TEST(Encode, GaussianPeakAndNeighbour) {
  std::vector<Point> kp{{5 * 4 + 1.5, 5 * 4 + 3.9}};
  Heatmap hm = encode(kp, {true}, geom(12, 4, 1.0));
  EXPECT_EQ(hm.at(0, 5, 5), 1.0);
  EXPECT_NEAR(hm.at(0, 5, 6), 0.60653, 1e-5);
  EXPECT_DOUBLE_EQ(hm.at(0, 5, 6), std::exp(-0.5));
}

TEST(Encode, InvisibleJointsGiveZeroChannels) {
  std::vector<Point> kp(3, Point{10, 10});
  Heatmap hm = encode(kp, {false, false, false}, geom(8, 4, 2.0));
  for (double v : hm.tensor().values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, ValuesBelowFloorAreZeroAndPeakIsAtKeypointCell) {
  std::vector<Point> kp{{3, 3}, {29, 17}};
  Heatmap hm = encode(kp, {true, true}, geom(8, 4, 1.0));
  for (double v : hm.tensor().values()) EXPECT_TRUE(v == 0.0 || v >= kHeatmapFloor);
  EXPECT_EQ(hm.at(0, 0, 0), 1.0);
  EXPECT_EQ(hm.at(1, 4, 7), 1.0);
  EXPECT_EQ(hm.at(0, 7, 7), 0.0);
  DecodedPose d = decode(hm, geom(8, 4, 1.0));
  EXPECT_EQ(d.keypoints[0], (Point{2, 2}));
  EXPECT_EQ(d.keypoints[1], (Point{30, 18}));
}

TEST(Encode, RejectsVisibleJointOutsideImage) {
  std::vector<Point> kp{{32, 1}};
  EXPECT_THROW(encode(kp, {true}, geom(8, 4, 2.0)), DomainError);
  EXPECT_NO_THROW(encode(std::vector<Point>{{-1, -1}}, {false}, geom(8, 4, 2.0)));
}

TEST(Decode, CellCentreTimesStride) {
  Heatmap hm(1, 6, 10);
  hm.at(0, 3, 7) = 1.0;
  DecodedPose d = decode(hm, geom(10, 4, 2.0));
  EXPECT_EQ(d.keypoints[0], (Point{30, 14}));
  EXPECT_EQ(d.scores[0], 1.0);
}

TEST(Decode, UniformChannelTiesToFirstCell) {
  Heatmap hm(2, 4, 4);
  hm.tensor().fill(0.25);
  DecodedPose d = decode(hm, geom(4, 4, 2.0));
  EXPECT_EQ(d.keypoints[0], (Point{2, 2}));
  EXPECT_EQ(d.keypoints[1], (Point{2, 2}));
  // Row before column.
  hm.at(0, 1, 0) = 0.5;
  hm.at(0, 0, 3) = 0.5;
  EXPECT_EQ(decode(hm, geom(4, 4, 2.0)).keypoints[0], (Point{14, 2}));
}

TEST(Decode, SweepRoundTripWithinStride) {
  const HeatmapGeometry g = HeatmapGeometry::for_image(32, 4, 2.0);
  for (double y = 0; y < 32; y += 0.5)
    for (double x = 0; x < 32; x += 0.5) {
      std::vector<Point> kp{{x, y}};
      Point d = decode(encode(kp, {true}, g), g).keypoints[0];
      ASSERT_LE(std::abs(d.x - x), 4.0);
      ASSERT_LE(std::abs(d.y - y), 4.0);
    }
}

TEST(Fuse, ConstantHalvesGiveClosedForm) {
  Heatmap a(2, 3, 3);
  a.tensor().fill(0.5);
  std::vector<Heatmap> w{a, a};
  const Heatmap f = fuse(w);
  for (double v : f.tensor().values()) EXPECT_NEAR(v, std::sqrt(0.5) / 2, 1e-15);
  EXPECT_NEAR(std::sqrt(0.5) / 2, 0.353553, 1e-6);
}

TEST(Fuse, SingleMapPassesThrough) {
  std::mt19937_64 rng(1);
  Heatmap a = random_map(3, 4, 5, rng);
  a.at(1, 2, 2) = -0.3;
  std::vector<Heatmap> w{a};
  EXPECT_EQ(fuse(w), a);
  EXPECT_EQ(fuse(w, FusionMode::Mean), a);
}

TEST(Fuse, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(2);
  for (int n : {2, 3, 5}) {
    std::vector<Heatmap> w;
    std::vector<std::vector<double>> raw;
    for (int k = 0; k < n; ++k) {
      w.push_back(random_map(4, 6, 5, rng));
      raw.push_back(oracle::flat(w.back()));
    }
    std::vector<double> expect = oracle::fuse_rss(raw);
    std::vector<double> got = oracle::flat(fuse(w));
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expect[i], 1e-12);
  }
}

TEST(Fuse, MeanMode) {
  std::mt19937_64 rng(3);
  std::vector<Heatmap> w{random_map(2, 3, 3, rng), random_map(2, 3, 3, rng), random_map(2, 3, 3, rng)};
  Heatmap f = fuse(w, FusionMode::Mean);
  for (std::size_t i = 0; i < f.tensor().size(); ++i) {
    const double m = (w[0].tensor()[i] + w[1].tensor()[i] + w[2].tensor()[i]) / 3;
    EXPECT_NEAR(f.tensor()[i], m, 1e-15);
  }
}

TEST(Fuse, PermutationInvariantExactly) {
  std::mt19937_64 rng(4);
  std::vector<Heatmap> w;
  for (int k = 0; k < 5; ++k) w.push_back(random_map(3, 5, 5, rng));
  for (FusionMode mode : {FusionMode::Eq5, FusionMode::Mean}) {
    const Heatmap base = fuse(w, mode);
    std::vector<Heatmap> shuffled = w;
    for (int t = 0; t < 10; ++t) {
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      ASSERT_EQ(fuse(shuffled, mode), base);
    }
  }
}

TEST(Fuse, HomogeneousUnderPowerOfTwoScaling) {
  std::mt19937_64 rng(5);
  std::vector<Heatmap> w;
  for (int k = 0; k < 3; ++k) w.push_back(random_map(3, 5, 5, rng));
  for (double c : {0.0, 0.25, 1.0, 2.0, 8.0}) {
    std::vector<Heatmap> scaled = w;
    for (Heatmap& h : scaled) h.tensor() *= c;
    for (FusionMode mode : {FusionMode::Eq5, FusionMode::Mean}) {
      Heatmap expect = fuse(w, mode);
      expect.tensor() *= c;
      EXPECT_EQ(fuse(scaled, mode), expect) << c;
    }
  }
}

TEST(Fuse, HomogeneousWithinRoundingForOtherScales) {
  std::mt19937_64 rng(6);
  std::vector<Heatmap> w;
  for (int k = 0; k < 3; ++k) w.push_back(random_map(3, 5, 5, rng));
  for (double c : {0.3, 3.7, 1e3}) {
    std::vector<Heatmap> scaled = w;
    for (Heatmap& h : scaled) h.tensor() *= c;
    Heatmap a = fuse(scaled);
    Heatmap b = fuse(w);
    for (std::size_t i = 0; i < a.tensor().size(); ++i)
      EXPECT_NEAR(a.tensor()[i], c * b.tensor()[i], 2e-15 * c * b.tensor()[i]);
  }
}

TEST(Fuse, IdenticalWindowIsMapOverRootN) {
  std::mt19937_64 rng(7);
  Heatmap a = random_map(4, 5, 5, rng);
  for (int n : {1, 2, 3, 5}) {
    std::vector<Heatmap> w(n, a);
    Heatmap f = fuse(w);
    for (std::size_t i = 0; i < f.tensor().size(); ++i)
      ASSERT_NEAR(f.tensor()[i], a.tensor()[i] / std::sqrt(n), 1e-12);
    EXPECT_EQ(decode(f, geom(5, 4, 2)).keypoints, decode(a, geom(5, 4, 2)).keypoints);
  }
}

TEST(Fuse, Errors) {
  std::vector<Heatmap> none;
  EXPECT_THROW(fuse(none), DomainError);
  std::vector<Heatmap> mixed{Heatmap(2, 3, 3), Heatmap(2, 3, 4)};
  EXPECT_THROW(fuse(mixed), DomainError);
  EXPECT_EQ(parse_fusion_mode("mean"), FusionMode::Mean);
  EXPECT_EQ(parse_fusion_mode(to_string(FusionMode::Eq5)), FusionMode::Eq5);
  EXPECT_THROW(parse_fusion_mode("max"), DomainError);
}

TEST(FlipAverage, MatchesOracle) {
  const SkeletonSpec& skel = mpii_skeleton();
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    Heatmap a = random_map(16, 6, 7, rng), b = random_map(16, 6, 7, rng);
    std::vector<double> expect =
        oracle::flip_average(oracle::flat(a), oracle::flat(b), 16, 6, 7, skel.flip_pairs);
    std::vector<double> got = oracle::flat(flip_average(a, b, skel));
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expect[i], 1e-12);
  }
}

TEST(FlipAverage, IdentityPermutationSymmetricInput) {
  SkeletonSpec plain{{"a", "b"}, {}, {}, {}};
  Heatmap m(2, 3, 4);
  for (int j = 0; j < 2; ++j)
    for (int v = 0; v < 3; ++v)
      for (int u = 0; u < 2; ++u) m.at(j, v, u) = m.at(j, v, 3 - u) = 0.1 * (j + v + u);
  EXPECT_EQ(flip_average(m, m, plain), m);
}

TEST(FlipAverage, Linearity) {
  std::mt19937_64 rng(9);
  Heatmap m = random_map(16, 4, 4, rng);
  Heatmap twice = m;
  twice.tensor() *= 2.0;
  EXPECT_EQ(flip_average(twice, Heatmap(16, 4, 4), mpii_skeleton()), m);
}

TEST(FlipAverage, KeepsPeakOfEncodedJoint) {
  const SkeletonSpec& skel = mpii_skeleton();
  const HeatmapGeometry g = HeatmapGeometry::for_image(64, 4, 2.0);
  std::vector<Point> kp(16, kInvisiblePoint);
  std::vector<bool> vis(16, false);
  kp[12] = {21, 37};
  vis[12] = true;
  Heatmap m = encode(kp, vis, g);
  Heatmap avg = flip_average(m, mirror_and_permute(m, skel.flip_permutation()), skel);
  EXPECT_EQ(decode(avg, g).keypoints[12], decode(m, g).keypoints[12]);
}

TEST(MirrorAndPermute, IsInvolution) {
  std::mt19937_64 rng(10);
  Heatmap m = random_map(16, 5, 6, rng);
  const std::vector<int> perm = mpii_skeleton().flip_permutation();
  EXPECT_EQ(mirror_and_permute(mirror_and_permute(m, perm), perm), m);
  EXPECT_THROW(flip_average(m, Heatmap(16, 5, 5), mpii_skeleton()), DomainError);
}

TEST(HeatmapDump, RoundTripsAsFloat32) {
  std::mt19937_64 rng(11);
  Heatmap m = random_map(3, 4, 5, rng);
  const auto path = std::filesystem::temp_directory_path() / "cfa_dump_test.bin";
  write_heatmap_dump(m, 4, path);
  int stride = 0;
  Heatmap back = read_heatmap_dump(path, &stride);
  EXPECT_EQ(stride, 4);
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 4u * m.tensor().size());
  for (std::size_t i = 0; i < back.tensor().size(); ++i)
    EXPECT_EQ(back.tensor()[i], static_cast<double>(static_cast<float>(m.tensor()[i])));
  std::filesystem::remove(path);
}

TEST(Geometry, ForImage) {
  HeatmapGeometry g = HeatmapGeometry::for_image(96);
  EXPECT_EQ(g.height, 24);
  EXPECT_EQ(g.image_width(), 96);
  EXPECT_THROW(HeatmapGeometry::for_image(30, 4), DomainError);
}
