#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfa/backbone.hpp"
#include "cfa/heatmap.hpp"
#include "cfa/nn.hpp"

namespace cfa {

/// Learnable maps feeding stage j from stage j-1:
///   phi1  a1 -> a1 shape (1x1, identity-initialised)
///   phi2  a2 -> a1 shape (stride-2 deconvolution chain, then 1x1)
///   phi3  y  -> a1 shape (1x1 channel lift)
///   phi4  y  -> y shape  (1x1, zero-initialised, optionally rectified)
class AggregatorSet {
 public:
  struct Grads {
    Tensor d_a1, d_a2, d_y;
  };

  AggregatorSet() = default;
  /// `prev_a2` and `a1` are per-sample shapes ([1, C, H, W]).
  AggregatorSet(Shape a1, Shape prev_a2, int joints, int deconv_kernel, bool phi4_rectified,
                nn::Rng& rng);

  /// phi1(a1) + phi2(a2) + phi3(y).
  Tensor aggregate(const FeatureTriple& prev);
  Grads aggregate_backward(const Tensor& d_out);

  /// phi4(y), elementwise >= 0 when rectified.
  Tensor refine(const Tensor& prev_y);
  Tensor refine_backward(const Tensor& d_out);

  void collect(const std::string& prefix, nn::ParamList& out);

  nn::Conv2d phi1;
  std::vector<nn::ConvTranspose2d> phi2_up;
  nn::Conv2d phi2_out;
  nn::Conv2d phi3;
  nn::Conv2d phi4;

 private:
  bool rectified_ = true;
  nn::ReLU phi4_relu_{true};
  Shape a1_{};
};

struct CascadeConfig {
  int num_stages = 2;
  std::vector<BackboneConfig> stage_configs;  // one per stage
  int fusion_window = 2;
  FusionMode fusion_mode = FusionMode::Eq5;
  bool phi4_rectified = true;
  int image_size = 96;

  /// Deeper first stage, shallower later stages.
  static CascadeConfig make(int num_stages, Preset first, Preset rest, int joints = 16,
                            int image_size = 96);

  std::vector<std::string> check() const;
  std::string canonical() const;
};

/// Batched outputs: stages[j] is [N, p, Hm, Wm]; fused combines the last
/// `fusion_window` of them.
struct CascadeOutput {
  std::vector<Tensor> stages;
  Tensor fused;

  Heatmap stage_heatmap(int stage, int sample) const;
  Heatmap fused_heatmap(int sample) const;
};

/// fuse() applied per sample across batched stage tensors.
Tensor fuse_batch(std::span<const Tensor> window, FusionMode mode);

/// Input of stage j >= 2: phi1(a1) + phi2(a2) + phi3(y) from the previous stage.
Tensor stage_input(const FeatureTriple& prev, AggregatorSet& agg);
/// y = a3 for the first stage (agg and prev_y null); a3 + phi4(prev_y) after.
Tensor stage_output(const Tensor& a3, const Tensor* prev_y, AggregatorSet* agg);

class Cascade {
 public:
  Cascade() = default;
  Cascade(const CascadeConfig& cfg, std::uint64_t seed);

  const CascadeConfig& config() const { return cfg_; }
  int num_stages() const { return static_cast<int>(stages_.size()); }
  std::uint64_t seed() const { return seed_; }

  CascadeOutput forward(const Tensor& image, nn::Mode mode);
  /// Backprop per-stage heatmap gradients from the last forward. Entries may
  /// be empty (no loss on that stage). Returns the gradient at the image.
  Tensor backward(const std::vector<Tensor>& d_stages);

  /// Taps exported by each stage in the last forward.
  const std::vector<FeatureTriple>& taps() const { return taps_; }

  Backbone& stage(int j) { return stages_.at(j); }
  AggregatorSet& aggregator(int j) { return aggregators_.at(j - 1); }

  void set_fusion(int window, FusionMode mode);
  nn::ParamList parameters();
  nn::ConstParamList parameters() const;

  /// Copy with one freshly initialised stage appended.
  Cascade grow(const BackboneConfig& new_stage, std::uint64_t seed) const;

 private:
  void append_stage(const BackboneConfig& bc, std::uint64_t seed);

  CascadeConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Backbone> stages_;
  std::vector<AggregatorSet> aggregators_;  // aggregators_[j-1] feeds stage j
  std::vector<FeatureTriple> taps_;
  std::vector<Tensor> raw_;                 // a3 per stage from the last forward
};

/// Grown model keeps stages 1..M bit-for-bit; the fusion window is kept.
Cascade grow_cascade(const Cascade& model, const BackboneConfig& new_stage, std::uint64_t seed);

/// Deterministic per-stage generator derived from (seed, stage index).
nn::Rng stage_rng(std::uint64_t seed, int stage);

}  // namespace cfa
