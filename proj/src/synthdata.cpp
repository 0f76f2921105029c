#include "cfa/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cfa/errors.hpp"
#include "cfa/image_io.hpp"

namespace cfa {

std::string to_string(Background b) {
  switch (b) {
    case Background::Plain: return "plain";
    case Background::Noise: return "noise";
    case Background::Clutter: return "clutter";
  }
  return "plain";
}

Background parse_background(const std::string& text) {
  for (Background b : {Background::Plain, Background::Noise, Background::Clutter}) {
    if (to_string(b) == text) return b;
  }
  throw DomainError("unknown background '" + text + "' (expected plain, noise or clutter)");
}

std::vector<std::string> SynthConfig::check() const {
  std::vector<std::string> out;
  if (count < 1) out.push_back("count must be >= 1");
  if (image_size <= 0 || image_size % 32 != 0) {
    out.push_back("image_size must be a positive multiple of 32");
  }
  if (!(occlusion_prob >= 0 && occlusion_prob <= 1)) {
    out.push_back("occlusion_prob must lie in [0, 1]");
  }
  if (!(limb_width > 0)) out.push_back("limb_width must be positive");
  if (!(pose_jitter >= 0)) out.push_back("pose_jitter must be >= 0");
  return out;
}

namespace {

using Rng = std::mt19937_64;

Rng sample_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5EEDu};
  return Rng(seq);
}

// Index order follows mpii_skeleton().limbs. Left and right limbs differ in
// colour so the mirror ambiguity is resolvable from pixels.
constexpr std::array<Rgb, 15> kLimbColors{{
    {1.00, 0.20, 0.20},  // pelvis - r_hip
    {1.00, 0.55, 0.10},  // r_hip - r_knee
    {1.00, 0.90, 0.10},  // r_knee - r_ankle
    {0.20, 0.50, 1.00},  // pelvis - l_hip
    {0.20, 0.90, 1.00},  // l_hip - l_knee
    {0.60, 0.30, 1.00},  // l_knee - l_ankle
    {0.95, 0.95, 0.95},  // pelvis - thorax
    {0.75, 0.75, 0.60},  // thorax - neck
    {0.90, 0.70, 0.55},  // neck - head_top
    {1.00, 0.35, 0.65},  // thorax - r_shoulder
    {0.85, 0.15, 0.45},  // r_shoulder - r_elbow
    {1.00, 0.65, 0.75},  // r_elbow - r_wrist
    {0.25, 1.00, 0.35},  // thorax - l_shoulder
    {0.10, 0.70, 0.20},  // l_shoulder - l_elbow
    {0.65, 1.00, 0.55},  // l_elbow - l_wrist
}};
constexpr Rgb kHeadColor{0.98, 0.82, 0.62};

Point add(Point p, double len, double angle_from_down) {
  return {p.x + len * std::sin(angle_from_down), p.y + len * std::cos(angle_from_down)};
}

std::vector<Point> sample_pose(Rng& rng, const SynthConfig& cfg) {
  const double s = cfg.image_size;
  const double u = 0.085 * s;
  const double jit = cfg.pose_jitter;
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto normal = [&](double mean, double sd) { return mean + sd * n01(rng); };

  std::vector<Point> k(16);
  const Point pelvis{normal(s / 2, 0.04 * s), normal(0.55 * s, 0.03 * s)};
  const double torso = normal(0.0, 0.5 * jit);  // lean, radians from vertical
  const double pi = std::numbers::pi;
  k[6] = pelvis;
  k[7] = add(pelvis, 2.6 * u, pi + torso);
  k[8] = add(k[7], 0.6 * u, pi + torso);
  k[9] = add(k[8], 1.4 * u, pi + torso + normal(0.0, 0.5 * jit));
  const Point side{std::cos(torso), -std::sin(torso)};  // towards image right
  auto offset = [&](Point p, double d) { return Point{p.x + d * side.x, p.y + d * side.y}; };
  k[2] = offset(pelvis, -0.55 * u);
  k[3] = offset(pelvis, 0.55 * u);
  k[12] = offset(k[7], -0.9 * u);
  k[13] = offset(k[7], 0.9 * u);

  const double thigh_r = -torso + normal(-0.15, jit);
  const double thigh_l = -torso + normal(0.15, jit);
  k[1] = add(k[2], 2.0 * u, thigh_r);
  k[0] = add(k[1], 2.0 * u, thigh_r + normal(0.0, jit));
  k[4] = add(k[3], 2.0 * u, thigh_l);
  k[5] = add(k[4], 2.0 * u, thigh_l + normal(0.0, jit));

  const double arm_r = -torso - (0.2 + 2.2 * uni(rng));
  const double arm_l = -torso + (0.2 + 2.2 * uni(rng));
  k[11] = add(k[12], 1.5 * u, arm_r);
  k[10] = add(k[11], 1.4 * u, arm_r + normal(0.0, 2.0 * jit));
  k[14] = add(k[13], 1.5 * u, arm_l);
  k[15] = add(k[14], 1.4 * u, arm_l + normal(0.0, 2.0 * jit));

  // Keep the whole figure, including the head disk, inside the frame.
  const double margin = cfg.limb_width + 2.0;
  double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
  const double head_r = std::hypot(k[9].x - k[8].x, k[9].y - k[8].y) / 2;
  const Point head_c{(k[8].x + k[9].x) / 2, (k[8].y + k[9].y) / 2};
  for (const Point& p : k) {
    x0 = std::min(x0, p.x), y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x), y1 = std::max(y1, p.y);
  }
  x0 = std::min(x0, head_c.x - head_r), y0 = std::min(y0, head_c.y - head_r);
  x1 = std::max(x1, head_c.x + head_r), y1 = std::max(y1, head_c.y + head_r);
  const double avail = s - 2 * margin;
  const double shrink = std::min(1.0, avail / std::max(x1 - x0, y1 - y0));
  const Point centre{(x0 + x1) / 2, (y0 + y1) / 2};
  for (Point& p : k) {
    p = {(p.x - centre.x) * shrink + centre.x, (p.y - centre.y) * shrink + centre.y};
  }
  x0 = centre.x - (centre.x - x0) * shrink, x1 = centre.x + (x1 - centre.x) * shrink;
  y0 = centre.y - (centre.y - y0) * shrink, y1 = centre.y + (y1 - centre.y) * shrink;
  const double dx = x0 < margin ? margin - x0 : (x1 > s - margin ? s - margin - x1 : 0.0);
  const double dy = y0 < margin ? margin - y0 : (y1 > s - margin ? s - margin - y1 : 0.0);
  for (Point& p : k) p = {p.x + dx, p.y + dy};
  return k;
}

void paint_background(Tensor& img, Rng& rng, Background bg) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Rgb base{0.1 + 0.25 * uni(rng), 0.1 + 0.25 * uni(rng), 0.1 + 0.25 * uni(rng)};
  fill_rect(img, 0, 0, img.w(), img.h(), base);
  if (bg == Background::Clutter) {
    for (int i = 0; i < 6; ++i) {
      const double x = uni(rng) * img.w(), y = uni(rng) * img.h();
      const double w = (0.1 + 0.3 * uni(rng)) * img.w(), h = (0.1 + 0.3 * uni(rng)) * img.h();
      fill_rect(img, x, y, x + w, y + h,
                {0.05 + 0.4 * uni(rng), 0.05 + 0.4 * uni(rng), 0.05 + 0.4 * uni(rng)});
    }
  }
  if (bg != Background::Plain) {
    std::normal_distribution<double> noise(0.0, 0.05);
    for (double& v : img.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
}

}  // namespace

PoseSample generate_sample(const SynthConfig& cfg, int index) {
  if (auto problems = cfg.check(); !problems.empty()) {
    throw DomainError("invalid synth config: " + problems.front());
  }
  if (index < 0 || index >= cfg.count) {
    throw DomainError("sample index " + std::to_string(index) + " outside [0, " +
                      std::to_string(cfg.count) + ")");
  }
  Rng rng = sample_rng(cfg.seed, index);
  const SkeletonSpec& skel = mpii_skeleton();
  std::vector<Point> k = sample_pose(rng, cfg);

  PoseSample s;
  s.image = Tensor(1, 3, cfg.image_size, cfg.image_size);
  paint_background(s.image, rng, cfg.background);
  for (std::size_t i = 0; i < skel.limbs.size(); ++i) {
    auto [a, b] = skel.limbs[i];
    draw_segment(s.image, k[a], k[b], cfg.limb_width, kLimbColors[i]);
  }
  const double head = std::hypot(k[9].x - k[8].x, k[9].y - k[8].y);
  draw_disk(s.image, {(k[8].x + k[9].x) / 2, (k[8].y + k[9].y) / 2}, head / 2, kHeadColor);

  std::vector<bool> visible(16, true);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  if (uni(rng) < cfg.occlusion_prob) {
    const double sz = cfg.image_size;
    const double w = (0.15 + 0.2 * uni(rng)) * sz, h = (0.15 + 0.2 * uni(rng)) * sz;
    const double x = uni(rng) * (sz - w), y = uni(rng) * (sz - h);
    const double g = 0.2 + 0.3 * uni(rng);
    fill_rect(s.image, x, y, x + w, y + h, {g, g, g});
    for (int j = 0; j < 16; ++j) {
      if (k[j].x >= x && k[j].x < x + w && k[j].y >= y && k[j].y < y + h) visible[j] = false;
    }
  }
  quantize_8bit(s.image);

  char id[64];
  std::snprintf(id, sizeof id, "synth_%llu_%05d", static_cast<unsigned long long>(cfg.seed), index);
  PersonAnnotation& a = s.annotation;
  a.image_id = id;
  a.keypoints = k;
  a.visibility = visible;
  for (int j = 0; j < 16; ++j) {
    if (!visible[j]) a.keypoints[j] = kInvisiblePoint;
  }
  a.head_length = head;
  return s;
}

std::vector<PoseSample> generate_dataset(const SynthConfig& cfg) {
  std::vector<PoseSample> out;
  out.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentRanges& r) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto sym = [&](double m) { return (2 * uni(rng) - 1) * m; };
  AugmentParams p;
  p.rotation = sym(r.max_rotation);
  p.scale = r.min_scale + (r.max_scale - r.min_scale) * uni(rng);
  p.flip = uni(rng) < r.flip_prob;
  p.brightness = sym(r.color);
  p.contrast = sym(r.color);
  p.saturation = sym(r.color);
  p.hue = sym(r.color);
  return p;
}

Point augment_point(Point p, const AugmentParams& a, int width, int height) {
  const double cx = width / 2.0, cy = height / 2.0;
  const double c = std::cos(a.rotation), s = std::sin(a.rotation);
  const double dx = p.x - cx, dy = p.y - cy;
  Point q{cx + a.scale * (c * dx - s * dy), cy + a.scale * (s * dx + c * dy)};
  if (a.flip) q.x = width - q.x;
  return q;
}

namespace {

Point inverse_point(Point q, const AugmentParams& a, int width, int height) {
  if (a.flip) q.x = width - q.x;
  const double cx = width / 2.0, cy = height / 2.0;
  const double c = std::cos(a.rotation), s = std::sin(a.rotation);
  const double dx = (q.x - cx) / a.scale, dy = (q.y - cy) / a.scale;
  return {cx + c * dx + s * dy, cy - s * dx + c * dy};
}

Tensor warp(const Tensor& img, const AugmentParams& a) {
  const int h = img.h(), w = img.w();
  Tensor out(img.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point src = inverse_point({x + 0.5, y + 0.5}, a, w, h);
      const double fx = src.x - 0.5, fy = src.y - 0.5;
      const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
      const double ax = fx - x0, ay = fy - y0;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](int xx, int yy) {
          return (xx >= 0 && yy >= 0 && xx < w && yy < h) ? img.at(0, c, yy, xx) : 0.0;
        };
        double v = 0.0;
        if (ax == 0.0 && ay == 0.0) {
          v = px(x0, y0);
        } else {
          v = (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
              ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
        }
        out.at(0, c, y, x) = v;
      }
    }
  }
  return out;
}

void color_jitter(Tensor& img, const AugmentParams& a) {
  const int hw = img.h() * img.w();
  double* r = img.plane(0, 0);
  double* g = img.plane(0, 1);
  double* b = img.plane(0, 2);
  auto gray = [&](int i) { return 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]; };
  bool touched = false;
  if (a.brightness != 0.0) {
    for (double& v : img.values()) v *= 1.0 + a.brightness;
    touched = true;
  }
  if (a.contrast != 0.0) {
    double mean = 0.0;
    for (int i = 0; i < hw; ++i) mean += gray(i);
    mean /= hw;
    for (double& v : img.values()) v = mean + (v - mean) * (1.0 + a.contrast);
    touched = true;
  }
  if (a.saturation != 0.0) {
    for (int i = 0; i < hw; ++i) {
      const double y = gray(i);
      r[i] = y + (r[i] - y) * (1.0 + a.saturation);
      g[i] = y + (g[i] - y) * (1.0 + a.saturation);
      b[i] = y + (b[i] - y) * (1.0 + a.saturation);
    }
    touched = true;
  }
  if (a.hue != 0.0) {
    const double c = std::cos(a.hue * std::numbers::pi), s = std::sin(a.hue * std::numbers::pi);
    for (int i = 0; i < hw; ++i) {
      const double y = gray(i);
      const double ii = 0.596 * r[i] - 0.274 * g[i] - 0.322 * b[i];
      const double qq = 0.211 * r[i] - 0.523 * g[i] + 0.312 * b[i];
      const double i2 = c * ii - s * qq, q2 = s * ii + c * qq;
      r[i] = y + 0.956 * i2 + 0.621 * q2;
      g[i] = y - 0.272 * i2 - 0.647 * q2;
      b[i] = y - 1.106 * i2 + 1.703 * q2;
    }
    touched = true;
  }
  if (touched) {
    for (double& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  }
}

}  // namespace

PoseSample augment(const PoseSample& sample, const AugmentParams& params,
                   const SkeletonSpec& skel) {
  if (!(params.scale > 0)) throw DomainError("augment scale must be positive");
  PoseSample out = sample;
  const int w = sample.image.w(), h = sample.image.h();
  if (!params.geometric_identity()) {
    out.image = warp(sample.image, params);
    PersonAnnotation& a = out.annotation;
    for (int j = 0; j < a.num_joints(); ++j) {
      if (!a.visibility[j]) continue;
      const Point q = augment_point(a.keypoints[j], params, w, h);
      if (q.x >= 0 && q.y >= 0 && q.x < w && q.y < h) {
        a.keypoints[j] = q;
      } else {
        a.keypoints[j] = kInvisiblePoint;
        a.visibility[j] = false;
      }
    }
    a.head_length *= params.scale;
    if (params.flip) {
      const std::vector<int> perm = skel.flip_permutation();
      const auto kp = a.keypoints;
      const auto vis = a.visibility;
      for (int j = 0; j < a.num_joints(); ++j) {
        a.keypoints[j] = kp[perm[j]];
        a.visibility[j] = vis[perm[j]];
      }
    }
    a.bbox.reset();
  }
  color_jitter(out.image, params);
  return out;
}

void write_dataset(const std::vector<PoseSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<PersonAnnotation> anns;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.ppm", i);
    write_ppm(samples[i].image, dir / name);
    anns.push_back(samples[i].annotation);
    anns.back().image_path = name;
  }
  save_annotations(anns, dir / "annotations.json");
}

std::vector<PoseSample> read_dataset(const std::filesystem::path& dir, const SkeletonSpec& skel) {
  std::vector<PoseSample> out;
  for (auto& a : load_annotations(dir / "annotations.json", skel)) {
    if (a.image_path.empty()) throw ParseError("annotation " + a.image_id + " lacks image_path");
    PoseSample s;
    s.image = read_ppm(dir / a.image_path);
    s.annotation = std::move(a);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cfa
