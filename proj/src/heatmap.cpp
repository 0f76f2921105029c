#include "cfa/heatmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cfa/errors.hpp"

namespace cfa {

HeatmapGeometry HeatmapGeometry::for_image(int image_size, int stride, double sigma) {
  if (stride <= 0 || image_size <= 0 || image_size % stride != 0) {
    throw DomainError("image size " + std::to_string(image_size) +
                      " is not a positive multiple of stride " + std::to_string(stride));
  }
  if (!(sigma > 0)) throw DomainError("sigma must be positive");
  return {image_size / stride, image_size / stride, stride, sigma};
}

Heatmap::Heatmap(Tensor values) : values_(std::move(values)) {
  if (values_.n() != 1) throw ShapeError("heatmap tensor must hold one sample");
}

std::string to_string(FusionMode mode) { return mode == FusionMode::Eq5 ? "eq5" : "mean"; }

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "eq5") return FusionMode::Eq5;
  if (text == "mean") return FusionMode::Mean;
  throw DomainError("unknown fusion mode '" + text + "' (expected eq5 or mean)");
}

Heatmap encode(std::span<const Point> keypoints, const std::vector<bool>& visibility,
               const HeatmapGeometry& geom) {
  if (keypoints.size() != visibility.size()) {
    throw DomainError("keypoint and visibility counts differ");
  }
  const int p = static_cast<int>(keypoints.size());
  Heatmap hm(p, geom.height, geom.width);
  const double denom = 2.0 * geom.sigma * geom.sigma;
  for (int j = 0; j < p; ++j) {
    if (!visibility[j]) continue;
    const Point k = keypoints[j];
    if (!(k.x >= 0 && k.y >= 0 && k.x < geom.image_width() && k.y < geom.image_height())) {
      throw DomainError("visible joint " + std::to_string(j) + " at (" + std::to_string(k.x) +
                        ", " + std::to_string(k.y) + ") is outside the image");
    }
    const int cu = static_cast<int>(std::floor(k.x / geom.stride));
    const int cv = static_cast<int>(std::floor(k.y / geom.stride));
    for (int v = 0; v < geom.height; ++v) {
      for (int u = 0; u < geom.width; ++u) {
        const double du = u - cu, dv = v - cv;
        const double g = std::exp(-(du * du + dv * dv) / denom);
        hm.at(j, v, u) = g < kHeatmapFloor ? 0.0 : g;
      }
    }
  }
  return hm;
}

DecodedPose decode(const Heatmap& hm, const HeatmapGeometry& geom) {
  DecodedPose out;
  out.keypoints.resize(hm.joints());
  out.scores.resize(hm.joints());
  for (int j = 0; j < hm.joints(); ++j) {
    int best_u = 0, best_v = 0;
    double best = hm.at(j, 0, 0);
    for (int v = 0; v < hm.height(); ++v) {
      for (int u = 0; u < hm.width(); ++u) {
        if (hm.at(j, v, u) > best) {
          best = hm.at(j, v, u);
          best_u = u;
          best_v = v;
        }
      }
    }
    out.keypoints[j] = {(best_u + 0.5) * geom.stride, (best_v + 0.5) * geom.stride};
    out.scores[j] = best;
  }
  return out;
}

Heatmap fuse(std::span<const Heatmap> window, FusionMode mode) {
  if (window.empty()) throw DomainError("fusion window is empty");
  const Shape shape = window.front().tensor().shape();
  for (const Heatmap& h : window) {
    if (h.tensor().shape() != shape) {
      throw DomainError("fusion window shape mismatch: " + shape.str() + " vs " +
                        h.tensor().shape().str());
    }
  }
  const std::size_t n = window.size();
  // A single map is passed through: sqrt(s^2) would fold negative cells.
  if (n == 1) return window.front();
  Heatmap out{Tensor(shape)};
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < shape.numel(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double s = window[k].tensor()[i];
      terms[k] = mode == FusionMode::Eq5 ? s * s : s;
    }
    std::sort(terms.begin(), terms.end());
    double sum = 0.0;
    for (double t : terms) sum += t;
    out.tensor()[i] = (mode == FusionMode::Eq5 ? std::sqrt(sum) : sum) / static_cast<double>(n);
  }
  return out;
}

Heatmap mirror_and_permute(const Heatmap& hm, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != hm.joints()) {
    throw DomainError("flip permutation size differs from joint count");
  }
  Heatmap out(hm.joints(), hm.height(), hm.width());
  const int w = hm.width();
  for (int j = 0; j < hm.joints(); ++j) {
    for (int v = 0; v < hm.height(); ++v) {
      for (int u = 0; u < w; ++u) out.at(j, v, u) = hm.at(perm[j], v, w - 1 - u);
    }
  }
  return out;
}

Heatmap flip_average(const Heatmap& original, const Heatmap& from_flipped,
                     const SkeletonSpec& skel) {
  if (original.tensor().shape() != from_flipped.tensor().shape()) {
    throw DomainError("flip_average shape mismatch: " + original.tensor().shape().str() +
                      " vs " + from_flipped.tensor().shape().str());
  }
  const std::vector<int> perm = skel.flip_permutation();
  Heatmap out = mirror_and_permute(from_flipped, perm);
  Tensor& t = out.tensor();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (original.tensor()[i] + t[i]) / 2.0;
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "dump and checkpoint formats assume a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError("truncated heatmap dump " + path.string());
  }
  return v;
}

}  // namespace

void write_heatmap_dump(const Heatmap& hm, int stride, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  put<std::int32_t>(out, hm.joints());
  put<std::int32_t>(out, hm.height());
  put<std::int32_t>(out, hm.width());
  put<std::int32_t>(out, stride);
  for (double v : hm.tensor().values()) put<float>(out, static_cast<float>(v));
  if (!out) throw IoError("write failed for " + path.string());
}

Heatmap read_heatmap_dump(const std::filesystem::path& path, int* stride) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto p = get<std::int32_t>(in, path);
  const auto h = get<std::int32_t>(in, path);
  const auto w = get<std::int32_t>(in, path);
  const auto s = get<std::int32_t>(in, path);
  if (p <= 0 || h <= 0 || w <= 0 || s <= 0) throw ParseError("bad heatmap dump header");
  Heatmap hm(p, h, w);
  for (double& v : hm.tensor().values()) v = get<float>(in, path);
  if (stride) *stride = s;
  return hm;
}

}  // namespace cfa
