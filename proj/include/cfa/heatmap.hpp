#pragma once

#include <algorithm>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfa/poseschema.hpp"
#include "cfa/tensor.hpp"

namespace cfa {

struct HeatmapGeometry {
  int height = 24;
  int width = 24;
  int stride = 4;     // image pixels per heatmap cell
  double sigma = 2.0;  // Gaussian std, in cells

  int image_height() const { return height * stride; }
  int image_width() const { return width * stride; }

  /// Geometry for a square input of `image_size` pixels.
  static HeatmapGeometry for_image(int image_size, int stride = 4, double sigma = 2.0);
};

/// p-channel confidence grid, stored as a [1, p, Hm, Wm] tensor.
class Heatmap {
 public:
  Heatmap() = default;
  Heatmap(int joints, int height, int width) : values_(1, joints, height, width) {}
  explicit Heatmap(Tensor values);

  int joints() const { return values_.c(); }
  int height() const { return values_.h(); }
  int width() const { return values_.w(); }

  double& at(int j, int v, int u) { return values_.at(0, j, v, u); }
  double at(int j, int v, int u) const { return values_.at(0, j, v, u); }

  const Tensor& tensor() const { return values_; }
  Tensor& tensor() { return values_; }

  bool operator==(const Heatmap& o) const {
    return values_.shape() == o.values_.shape() &&
           std::equal(values_.values().begin(), values_.values().end(),
                      o.values_.values().begin());
  }

 private:
  Tensor values_;
};

enum class FusionMode { Eq5, Mean };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

/// Values below this are written as zero by `encode`.
inline constexpr double kHeatmapFloor = 1e-4;

/// Peak-one Gaussian per visible joint centred on floor(keypoint / stride);
/// invisible joints get an all-zero channel.
Heatmap encode(std::span<const Point> keypoints, const std::vector<bool>& visibility,
               const HeatmapGeometry& geom);

struct DecodedPose {
  std::vector<Point> keypoints;
  std::vector<double> scores;
};

/// Per-channel argmax (first row, then first column, on ties) mapped back to
/// the centre of the winning cell in image pixels.
DecodedPose decode(const Heatmap& hm, const HeatmapGeometry& geom);

/// Combine the trailing stage maps. Eq5 is sqrt(sum of squares) / n,
/// Mean is the arithmetic mean. Per-cell terms are accumulated in sorted
/// order so the result does not depend on window order. A one-map window
/// returns that map unchanged.
Heatmap fuse(std::span<const Heatmap> window, FusionMode mode = FusionMode::Eq5);

/// Mirror columns and swap left/right channels. An involution whenever
/// `perm` is.
Heatmap mirror_and_permute(const Heatmap& hm, std::span<const int> perm);

/// (original + unflip(flipped)) / 2 where `flipped` was predicted on the
/// mirrored image.
Heatmap flip_average(const Heatmap& original, const Heatmap& from_flipped,
                     const SkeletonSpec& skel);

/// Debug dump: int32 header (p, Hm, Wm, stride) then float32 values, all
/// little-endian.
void write_heatmap_dump(const Heatmap& hm, int stride, const std::filesystem::path& path);
Heatmap read_heatmap_dump(const std::filesystem::path& path, int* stride = nullptr);

}  // namespace cfa
