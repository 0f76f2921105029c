#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfa/nn.hpp"
#include "cfa/tensor.hpp"

namespace cfa {

enum class Preset { Mini, ResNet50Like, ResNet101Like, ResNet152Like };

std::string to_string(Preset p);
Preset parse_preset(const std::string& text);

struct BackboneConfig {
  int stem_channels = 8;                       // C1
  std::array<int, 3> block_channels{16, 32, 64};  // residual groups 2-4
  std::array<int, 3> blocks_per_stage{1, 1, 1};
  int stem_blocks = 1;  // residual group 1, owned by the stem
  int deconv_kernel = 4;
  int num_joints = 16;
  Preset preset = Preset::Mini;

  static BackboneConfig from_preset(Preset preset, int num_joints = 16);

  /// Input sides must be divisible by this (stride-4 stem, three halvings).
  static constexpr int kTotalStride = 32;
  static constexpr int kStemStride = 4;

  /// Empty when valid.
  std::vector<std::string> check() const;
  /// Stable text form; the basis of checkpoint config hashes.
  std::string canonical() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Taps of one stage: a1 low-level input features, a2 bottleneck, y heatmap.
/// All batched NCHW.
struct FeatureTriple {
  Tensor a1;
  Tensor a2;
  Tensor y;
};

/// Basic residual block without a post-addition rectifier:
/// out = shortcut(x) + bn2(conv2(relu(bn1(conv1(x))))).
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int in, int out, int stride);

  void init(nn::Rng& rng);
  Tensor forward(const Tensor& x, nn::Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(const std::string& prefix, nn::ParamList& out);

  bool has_projection() const { return projected_; }

  nn::Conv2d conv1, conv2, proj;
  nn::BatchNorm2d bn1, bn2, proj_bn;

 private:
  nn::ReLU relu_;
  bool projected_ = false;
};

/// Bottleneck plus the skip tensors the head consumes: skips[0] is the trunk
/// input (1/4 resolution), skips[1] and skips[2] the outputs of groups 2 and 3.
struct TrunkOutput {
  Tensor bottleneck;
  std::array<Tensor, 3> skips;
};

/// One hourglass stage. Stage 1 owns a stem (f1); later stages are built
/// without one and take an aggregated a1 directly.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, bool with_stem, nn::Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  bool has_stem() const { return has_stem_; }

  Tensor stem_forward(const Tensor& image, nn::Mode mode);
  TrunkOutput trunk_forward(const Tensor& a1, nn::Mode mode);
  Tensor head_forward(const TrunkOutput& trunk, nn::Mode mode);
  /// f3(f2(f1(x))) with y = a3. Requires a stem.
  FeatureTriple forward(const Tensor& image, nn::Mode mode);

  /// Backprop through head and trunk of the last forward call. `d_a2_extra`
  /// is gradient reaching the bottleneck from outside the stage (may be empty).
  /// Returns the gradient at the trunk input a1.
  Tensor backward_trunk_head(const Tensor& d_a3, const Tensor& d_a2_extra);
  /// Returns the gradient at the image.
  Tensor stem_backward(const Tensor& d_a1);

  void collect(const std::string& prefix, nn::ParamList& out);

 private:
  BackboneConfig cfg_;
  bool has_stem_ = false;

  // f1
  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::ReLU stem_relu_;
  nn::MaxPool2 stem_pool_;
  std::vector<ResidualBlock> stem_blocks_;

  // f2
  std::array<std::vector<ResidualBlock>, 3> groups_;

  // f3
  std::array<nn::ConvTranspose2d, 3> up_;
  std::array<nn::BatchNorm2d, 3> up_bn_;
  std::array<nn::ReLU, 3> up_relu_;
  std::array<nn::Conv2d, 3> lateral_;
  nn::Conv2d out_;

  std::array<Shape, 3> skip_shapes_{};
};

}  // namespace cfa
