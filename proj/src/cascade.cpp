#include "cfa/cascade.hpp"

#include <bit>

#include "cfa/errors.hpp"

namespace cfa {

using nn::Mode;

nn::Rng stage_rng(std::uint64_t seed, int stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), 0xCFAu};
  return nn::Rng(seq);
}

// --------------------------------------------------------- AggregatorSet

AggregatorSet::AggregatorSet(Shape a1, Shape prev_a2, int joints, int deconv_kernel,
                             bool phi4_rectified, nn::Rng& rng)
    : phi1(a1.c, a1.c, 1, 1, 0, false),
      phi2_out(a1.c, a1.c, 1, 1, 0, false),
      phi3(joints, a1.c, 1, 1, 0, false),
      phi4(joints, joints, 1, 1, 0, true),
      rectified_(phi4_rectified),
      a1_(a1) {
  if (prev_a2.h <= 0 || a1.h % prev_a2.h != 0 || a1.w % prev_a2.w != 0 ||
      a1.h / prev_a2.h != a1.w / prev_a2.w || !std::has_single_bit(
          static_cast<unsigned>(a1.h / prev_a2.h))) {
    throw ShapeError("phi2 cannot upsample " + prev_a2.str() + " to " + a1.str() +
                     " by repeated doubling");
  }
  const int levels = std::countr_zero(static_cast<unsigned>(a1.h / prev_a2.h));
  const int pad = (deconv_kernel - 2) / 2;
  int in = prev_a2.c;
  for (int i = 0; i < levels; ++i) {
    phi2_up.emplace_back(in, a1.c, deconv_kernel, 2, pad, false);
    phi2_up.back().init_he(rng);
    in = a1.c;
  }
  phi1.init_identity();
  phi2_out.init_he(rng);
  phi3.init_he(rng);
  phi4.init_zero();
}

Tensor AggregatorSet::aggregate(const FeatureTriple& prev) {
  Tensor low = phi1.forward(prev.a1);
  Tensor mid = prev.a2;
  for (auto& up : phi2_up) mid = up.forward(mid);
  mid = phi2_out.forward(mid);
  Tensor high = phi3.forward(prev.y);
  const Shape want{prev.a1.n(), a1_.c, a1_.h, a1_.w};
  if (low.shape() != want) throw ShapeError("phi1 output " + low.shape().str() + " != " + want.str());
  if (mid.shape() != want) throw ShapeError("phi2 output " + mid.shape().str() + " != " + want.str());
  if (high.shape() != want) throw ShapeError("phi3 output " + high.shape().str() + " != " + want.str());
  low += mid;
  low += high;
  return low;
}

AggregatorSet::Grads AggregatorSet::aggregate_backward(const Tensor& d_out) {
  Grads g;
  g.d_a1 = phi1.backward(d_out);
  Tensor d = phi2_out.backward(d_out);
  for (auto it = phi2_up.rbegin(); it != phi2_up.rend(); ++it) d = it->backward(d);
  g.d_a2 = std::move(d);
  g.d_y = phi3.backward(d_out);
  return g;
}

Tensor AggregatorSet::refine(const Tensor& prev_y) {
  Tensor z = phi4.forward(prev_y);
  return rectified_ ? phi4_relu_.forward(z) : z;
}

Tensor AggregatorSet::refine_backward(const Tensor& d_out) {
  return phi4.backward(rectified_ ? phi4_relu_.backward(d_out) : d_out);
}

void AggregatorSet::collect(const std::string& prefix, nn::ParamList& out) {
  phi1.collect(prefix + ".phi1", out);
  for (std::size_t i = 0; i < phi2_up.size(); ++i) {
    phi2_up[i].collect(prefix + ".phi2.up" + std::to_string(i), out);
  }
  phi2_out.collect(prefix + ".phi2.out", out);
  phi3.collect(prefix + ".phi3", out);
  phi4.collect(prefix + ".phi4", out);
}

// --------------------------------------------------------- CascadeConfig

CascadeConfig CascadeConfig::make(int num_stages, Preset first, Preset rest, int joints,
                                  int image_size) {
  CascadeConfig c;
  c.num_stages = num_stages;
  c.image_size = image_size;
  for (int j = 0; j < num_stages; ++j) {
    c.stage_configs.push_back(BackboneConfig::from_preset(j == 0 ? first : rest, joints));
  }
  c.fusion_window = num_stages >= 2 ? 2 : 1;
  return c;
}

std::vector<std::string> CascadeConfig::check() const {
  std::vector<std::string> out;
  if (num_stages < 1) out.push_back("num_stages must be >= 1");
  if (static_cast<int>(stage_configs.size()) != num_stages) {
    out.push_back("need one backbone config per stage");
  }
  if (fusion_window < 1 || fusion_window > num_stages) {
    out.push_back("fusion_window must lie in [1, num_stages]");
  }
  if (image_size <= 0 || image_size % BackboneConfig::kTotalStride != 0) {
    out.push_back("image_size must be a positive multiple of " +
                  std::to_string(BackboneConfig::kTotalStride));
  }
  for (std::size_t j = 0; j < stage_configs.size(); ++j) {
    for (const auto& p : stage_configs[j].check()) {
      out.push_back("stage " + std::to_string(j + 1) + ": " + p);
    }
    if (j > 0 && (stage_configs[j].stem_channels != stage_configs[0].stem_channels ||
                  stage_configs[j].num_joints != stage_configs[0].num_joints)) {
      out.push_back("stage " + std::to_string(j + 1) +
                    " must share stem_channels and num_joints with stage 1");
    }
  }
  return out;
}

std::string CascadeConfig::canonical() const {
  std::string s = "stages=" + std::to_string(num_stages) +
                  ";window=" + std::to_string(fusion_window) +
                  ";mode=" + to_string(fusion_mode) +
                  ";phi4_rectified=" + (phi4_rectified ? "1" : "0") +
                  ";image_size=" + std::to_string(image_size);
  for (const auto& sc : stage_configs) s += "|" + sc.canonical();
  return s;
}

// --------------------------------------------------------- CascadeOutput

Heatmap CascadeOutput::stage_heatmap(int stage, int sample) const {
  return Heatmap(stages.at(stage).slice(sample));
}

Heatmap CascadeOutput::fused_heatmap(int sample) const { return Heatmap(fused.slice(sample)); }

Tensor fuse_batch(std::span<const Tensor> window, FusionMode mode) {
  if (window.empty()) throw DomainError("fusion window is empty");
  const int n = window.front().n();
  std::vector<Tensor> per_sample;
  per_sample.reserve(n);
  std::vector<Heatmap> maps(window.size());
  for (int b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < window.size(); ++k) {
      if (window[k].shape() != window.front().shape()) {
        throw DomainError("fusion window shape mismatch");
      }
      maps[k] = Heatmap(window[k].slice(b));
    }
    per_sample.push_back(fuse(maps, mode).tensor());
  }
  return Tensor::concat(per_sample);
}

Tensor stage_input(const FeatureTriple& prev, AggregatorSet& agg) { return agg.aggregate(prev); }

Tensor stage_output(const Tensor& a3, const Tensor* prev_y, AggregatorSet* agg) {
  if (prev_y == nullptr) return a3;
  if (agg == nullptr) throw DomainError("later stages need an aggregator set");
  if (prev_y->shape() != a3.shape()) {
    throw ShapeError("previous heatmap " + prev_y->shape().str() + " vs stage output " +
                     a3.shape().str());
  }
  return a3 + agg->refine(*prev_y);
}

// --------------------------------------------------------------- Cascade

Cascade::Cascade(const CascadeConfig& cfg, std::uint64_t seed) : seed_(seed) {
  if (auto problems = cfg.check(); !problems.empty()) {
    throw ShapeError("invalid cascade config: " + problems.front());
  }
  cfg_ = cfg;
  cfg_.num_stages = 0;
  cfg_.stage_configs.clear();
  for (int j = 0; j < cfg.num_stages; ++j) append_stage(cfg.stage_configs[j], seed);
  cfg_.fusion_window = cfg.fusion_window;
}

void Cascade::append_stage(const BackboneConfig& bc, std::uint64_t seed) {
  const int j = static_cast<int>(stages_.size());
  if (j > 0 && (bc.stem_channels != cfg_.stage_configs[0].stem_channels ||
                bc.num_joints != cfg_.stage_configs[0].num_joints)) {
    throw ShapeError("new stage must share stem_channels and num_joints with stage 1");
  }
  nn::Rng rng = stage_rng(seed, j);
  stages_.emplace_back(bc, j == 0, rng);
  if (j > 0) {
    const int s1 = cfg_.image_size / BackboneConfig::kStemStride;
    const int s2 = cfg_.image_size / BackboneConfig::kTotalStride;
    const Shape a1{1, bc.stem_channels, s1, s1};
    const Shape a2{1, cfg_.stage_configs[j - 1].block_channels[2], s2, s2};
    aggregators_.emplace_back(a1, a2, bc.num_joints, bc.deconv_kernel, cfg_.phi4_rectified, rng);
  }
  cfg_.stage_configs.push_back(bc);
  cfg_.num_stages = j + 1;
}

void Cascade::set_fusion(int window, FusionMode mode) {
  if (window < 1 || window > num_stages()) {
    throw DomainError("fusion window " + std::to_string(window) + " outside [1, " +
                      std::to_string(num_stages()) + "]");
  }
  cfg_.fusion_window = window;
  cfg_.fusion_mode = mode;
}

CascadeOutput Cascade::forward(const Tensor& image, Mode mode) {
  if (image.h() != cfg_.image_size || image.w() != cfg_.image_size) {
    throw ShapeError("image " + image.shape().str() + " does not match configured size " +
                     std::to_string(cfg_.image_size));
  }
  const int m = num_stages();
  taps_.assign(m, {});
  raw_.assign(m, {});
  CascadeOutput out;
  for (int j = 0; j < m; ++j) {
    Backbone& st = stages_[j];
    Tensor a1 = j == 0 ? st.stem_forward(image, mode) : stage_input(taps_[j - 1], aggregators_[j - 1]);
    TrunkOutput trunk = st.trunk_forward(a1, mode);
    raw_[j] = st.head_forward(trunk, mode);
    Tensor y = j == 0 ? stage_output(raw_[j], nullptr, nullptr)
                      : stage_output(raw_[j], &taps_[j - 1].y, &aggregators_[j - 1]);
    taps_[j] = {std::move(a1), std::move(trunk.bottleneck), y};
    out.stages.push_back(std::move(y));
  }
  const int n = cfg_.fusion_window;
  out.fused = fuse_batch(std::span<const Tensor>(out.stages).last(n), cfg_.fusion_mode);
  return out;
}

Tensor Cascade::backward(const std::vector<Tensor>& d_stages) {
  const int m = num_stages();
  if (static_cast<int>(d_stages.size()) != m || taps_.size() != static_cast<std::size_t>(m)) {
    throw ShapeError("backward needs one gradient slot per stage after a forward pass");
  }
  std::vector<Tensor> gy(m), g_a1(m), g_a2(m);
  for (int j = 0; j < m; ++j) {
    gy[j] = d_stages[j].empty() ? Tensor(taps_[j].y.shape()) : d_stages[j];
    require_same_shape(gy[j], taps_[j].y, "stage " + std::to_string(j + 1) + " gradient");
  }
  for (int j = m - 1; j >= 0; --j) {
    if (j > 0) gy[j - 1] += aggregators_[j - 1].refine_backward(gy[j]);
    Tensor d_a1 = stages_[j].backward_trunk_head(gy[j], g_a2[j]);
    if (!g_a1[j].empty()) d_a1 += g_a1[j];
    if (j == 0) return stages_[0].stem_backward(d_a1);
    AggregatorSet::Grads g = aggregators_[j - 1].aggregate_backward(d_a1);
    g_a1[j - 1] = std::move(g.d_a1);
    g_a2[j - 1] = std::move(g.d_a2);
    gy[j - 1] += g.d_y;
  }
  return {};
}

nn::ParamList Cascade::parameters() {
  nn::ParamList out;
  for (int j = 0; j < num_stages(); ++j) {
    stages_[j].collect("stage" + std::to_string(j + 1), out);
    if (j > 0) aggregators_[j - 1].collect("agg" + std::to_string(j + 1), out);
  }
  return out;
}

nn::ConstParamList Cascade::parameters() const {
  nn::ParamList mut = const_cast<Cascade*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Cascade Cascade::grow(const BackboneConfig& new_stage, std::uint64_t seed) const {
  Cascade g = *this;
  g.append_stage(new_stage, seed);
  g.taps_.clear();
  g.raw_.clear();
  return g;
}

Cascade grow_cascade(const Cascade& model, const BackboneConfig& new_stage, std::uint64_t seed) {
  return model.grow(new_stage, seed);
}

}  // namespace cfa
