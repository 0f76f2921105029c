#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cfa/poseschema.hpp"

namespace cfa {

enum class Background { Plain, Noise, Clutter };

std::string to_string(Background b);
Background parse_background(const std::string& text);

struct SynthConfig {
  std::uint64_t seed = 0;
  int count = 16;
  int image_size = 96;
  double occlusion_prob = 0.0;
  double limb_width = 3.0;   // pixels
  double pose_jitter = 0.35;  // radians, std per limb angle
  Background background = Background::Plain;

  std::vector<std::string> check() const;
};

/// Renders stick figure `index`. Pure function of (config, index); the head
/// is a disk whose diameter equals the neck-to-head-top distance, emitted as
/// head_length.
PoseSample generate_sample(const SynthConfig& config, int index);
std::vector<PoseSample> generate_dataset(const SynthConfig& config);

struct AugmentParams {
  double rotation = 0.0;  // radians, counter-clockwise in image coordinates
  bool flip = false;
  double scale = 1.0;
  double brightness = 0.0, contrast = 0.0, saturation = 0.0, hue = 0.0;

  bool geometric_identity() const { return rotation == 0.0 && !flip && scale == 1.0; }
};

struct AugmentRanges {
  double max_rotation = 0.5235987755982988;  // 30 degrees
  double min_scale = 0.75, max_scale = 1.25;
  double flip_prob = 0.5;
  double color = 0.2;
};

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentRanges& ranges = {});

/// Similarity warp about the image centre (scale, rotate, then optional
/// mirror) applied to pixels and keypoints alike; mirroring also swaps
/// left/right joints. Joints leaving the frame become invisible.
PoseSample augment(const PoseSample& sample, const AugmentParams& params,
                   const SkeletonSpec& skel = mpii_skeleton());

/// Forward keypoint map of `augment` (before visibility and permutation).
Point augment_point(Point p, const AugmentParams& params, int width, int height);

/// Writes img_NNNNN.ppm files and annotations.json into `dir`.
void write_dataset(const std::vector<PoseSample>& samples, const std::filesystem::path& dir);
/// Loads annotations.json and the referenced images from `dir`.
std::vector<PoseSample> read_dataset(const std::filesystem::path& dir,
                                     const SkeletonSpec& skel = mpii_skeleton());

}  // namespace cfa
