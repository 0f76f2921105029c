#include "cfa/backbone.hpp"

#include "cfa/errors.hpp"

namespace cfa {

using nn::Mode;

std::string to_string(Preset p) {
  switch (p) {
    case Preset::Mini: return "mini";
    case Preset::ResNet50Like: return "resnet50-like";
    case Preset::ResNet101Like: return "resnet101-like";
    case Preset::ResNet152Like: return "resnet152-like";
  }
  return "mini";
}

Preset parse_preset(const std::string& text) {
  for (Preset p : {Preset::Mini, Preset::ResNet50Like, Preset::ResNet101Like,
                   Preset::ResNet152Like}) {
    if (to_string(p) == text) return p;
  }
  throw DomainError("unknown backbone preset '" + text + "'");
}

BackboneConfig BackboneConfig::from_preset(Preset preset, int num_joints) {
  BackboneConfig c;
  c.preset = preset;
  c.num_joints = num_joints;
  switch (preset) {
    case Preset::Mini:
      break;
    // Group depths follow the 3/4/6, 3/4/23 and 3/8/36 ladder of the
    // reference networks, compressed to desk scale.
    case Preset::ResNet50Like:
      c.stem_channels = 16;
      c.block_channels = {32, 64, 128};
      c.blocks_per_stage = {2, 3, 1};
      break;
    case Preset::ResNet101Like:
      c.stem_channels = 16;
      c.block_channels = {32, 64, 128};
      c.blocks_per_stage = {2, 6, 1};
      break;
    case Preset::ResNet152Like:
      c.stem_channels = 16;
      c.block_channels = {32, 64, 128};
      c.blocks_per_stage = {4, 9, 1};
      break;
  }
  return c;
}

std::vector<std::string> BackboneConfig::check() const {
  std::vector<std::string> out;
  if (stem_channels <= 0) out.push_back("stem_channels must be positive");
  for (int c : block_channels) {
    if (c <= 0) out.push_back("block_channels must be positive");
  }
  for (int b : blocks_per_stage) {
    if (b < 1) out.push_back("blocks_per_stage entries must be >= 1");
  }
  if (stem_blocks < 0) out.push_back("stem_blocks must be >= 0");
  if (deconv_kernel < 2 || deconv_kernel % 2 != 0) {
    out.push_back("deconv_kernel must be even and >= 2");
  }
  if (num_joints <= 0) out.push_back("num_joints must be positive");
  return out;
}

std::string BackboneConfig::canonical() const {
  std::string s = "preset=" + to_string(preset) + ";c1=" + std::to_string(stem_channels) +
                  ";channels=";
  for (int c : block_channels) s += std::to_string(c) + ",";
  s += ";blocks=";
  for (int b : blocks_per_stage) s += std::to_string(b) + ",";
  s += ";stem_blocks=" + std::to_string(stem_blocks) +
       ";deconv_kernel=" + std::to_string(deconv_kernel) +
       ";joints=" + std::to_string(num_joints);
  return s;
}

// --------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(int in, int out, int stride)
    : conv1(in, out, 3, stride, 1, false),
      conv2(out, out, 3, 1, 1, false),
      bn1(out),
      bn2(out),
      projected_(in != out || stride != 1) {
  if (projected_) {
    proj = nn::Conv2d(in, out, 1, stride, 0, false);
    proj_bn = nn::BatchNorm2d(out);
  }
}

void ResidualBlock::init(nn::Rng& rng) {
  conv1.init_he(rng);
  conv2.init_he(rng);
  if (projected_) proj.init_he(rng);
  // Residual branch starts switched off.
  bn2.gamma.value.fill(0.0);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor branch = bn2.forward(conv2.forward(relu_.forward(bn1.forward(conv1.forward(x), mode))),
                              mode);
  if (projected_) return branch + proj_bn.forward(proj.forward(x), mode);
  return branch + x;
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  Tensor dx = conv1.backward(bn1.backward(relu_.backward(conv2.backward(bn2.backward(dy)))));
  if (projected_) {
    dx += proj.backward(proj_bn.backward(dy));
  } else {
    dx += dy;
  }
  return dx;
}

void ResidualBlock::collect(const std::string& prefix, nn::ParamList& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  if (projected_) {
    proj.collect(prefix + ".proj", out);
    proj_bn.collect(prefix + ".proj_bn", out);
  }
}

namespace {

Tensor run_blocks(std::vector<ResidualBlock>& blocks, Tensor x, Mode mode) {
  for (auto& b : blocks) x = b.forward(x, mode);
  return x;
}

Tensor back_blocks(std::vector<ResidualBlock>& blocks, Tensor d) {
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
  return d;
}

}  // namespace

// -------------------------------------------------------------- Backbone

Backbone::Backbone(const BackboneConfig& cfg, bool with_stem, nn::Rng& rng)
    : cfg_(cfg), has_stem_(with_stem) {
  if (auto problems = cfg.check(); !problems.empty()) {
    throw ShapeError("invalid backbone config: " + problems.front());
  }
  const int c1 = cfg.stem_channels;
  if (with_stem) {
    stem_conv_ = nn::Conv2d(3, c1, 7, 2, 3, false);
    stem_bn_ = nn::BatchNorm2d(c1);
    stem_conv_.init_he(rng);
    for (int i = 0; i < cfg.stem_blocks; ++i) {
      stem_blocks_.emplace_back(c1, c1, 1);
      stem_blocks_.back().init(rng);
    }
  }
  int in = c1;
  for (int g = 0; g < 3; ++g) {
    const int out = cfg.block_channels[g];
    for (int b = 0; b < cfg.blocks_per_stage[g]; ++b) {
      groups_[g].emplace_back(b == 0 ? in : out, out, b == 0 ? 2 : 1);
      groups_[g].back().init(rng);
    }
    in = out;
  }
  const int pad = (cfg.deconv_kernel - 2) / 2;
  const std::array<int, 4> widths{c1, cfg.block_channels[0], cfg.block_channels[1],
                                  cfg.block_channels[2]};
  for (int i = 0; i < 3; ++i) {
    const int from = widths[3 - i], to = widths[2 - i];
    up_[i] = nn::ConvTranspose2d(from, to, cfg.deconv_kernel, 2, pad, false);
    up_[i].init_he(rng);
    up_bn_[i] = nn::BatchNorm2d(to);
    lateral_[i] = nn::Conv2d(to, to, 1, 1, 0, false);
    lateral_[i].init_he(rng);
  }
  out_ = nn::Conv2d(c1, cfg.num_joints, 1, 1, 0, true);
  // Near-zero initial heatmaps; most target cells are zero.
  out_.init_normal(rng, 1e-3);
}

Tensor Backbone::stem_forward(const Tensor& image, Mode mode) {
  if (!has_stem_) throw ShapeError("stage has no stem; feed it an aggregated a1");
  if (image.c() != 3) throw ShapeError("image must have 3 channels, got " + image.shape().str());
  constexpr int div = BackboneConfig::kTotalStride;
  if (image.h() % div != 0 || image.w() % div != 0 || image.h() == 0 || image.w() == 0) {
    throw ShapeError("image size " + std::to_string(image.h()) + "x" +
                     std::to_string(image.w()) + " must be divisible by " + std::to_string(div));
  }
  Tensor x = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(image), mode)));
  return run_blocks(stem_blocks_, std::move(x), mode);
}

TrunkOutput Backbone::trunk_forward(const Tensor& a1, Mode mode) {
  if (a1.c() != cfg_.stem_channels || a1.h() % 8 != 0 || a1.w() % 8 != 0 || a1.h() == 0) {
    throw ShapeError("trunk input " + a1.shape().str() + " needs " +
                     std::to_string(cfg_.stem_channels) + " channels and sides divisible by 8");
  }
  TrunkOutput out;
  out.skips[0] = a1;
  Tensor x = run_blocks(groups_[0], a1, mode);
  out.skips[1] = x;
  x = run_blocks(groups_[1], std::move(x), mode);
  out.skips[2] = x;
  out.bottleneck = run_blocks(groups_[2], std::move(x), mode);
  for (int i = 0; i < 3; ++i) skip_shapes_[i] = out.skips[i].shape();
  return out;
}

Tensor Backbone::head_forward(const TrunkOutput& trunk, Mode mode) {
  Tensor x = trunk.bottleneck;
  for (int i = 0; i < 3; ++i) {
    const Tensor& skip = trunk.skips[2 - i];
    Tensor up = up_relu_[i].forward(up_bn_[i].forward(up_[i].forward(x), mode));
    if (up.shape() != lateral_[i].output_shape(skip.shape())) {
      throw ShapeError("skip " + std::to_string(2 - i) + " shape " + skip.shape().str() +
                       " does not match upsampled " + up.shape().str());
    }
    x = up + lateral_[i].forward(skip);
  }
  return out_.forward(x);
}

FeatureTriple Backbone::forward(const Tensor& image, Mode mode) {
  FeatureTriple t;
  t.a1 = stem_forward(image, mode);
  TrunkOutput trunk = trunk_forward(t.a1, mode);
  t.y = head_forward(trunk, mode);
  t.a2 = std::move(trunk.bottleneck);
  return t;
}

Tensor Backbone::backward_trunk_head(const Tensor& d_a3, const Tensor& d_a2_extra) {
  Tensor d = out_.backward(d_a3);
  std::array<Tensor, 3> d_skip;
  for (int i = 2; i >= 0; --i) {
    d_skip[2 - i] = lateral_[i].backward(d);
    d = up_[i].backward(up_bn_[i].backward(up_relu_[i].backward(d)));
  }
  if (!d_a2_extra.empty()) d += d_a2_extra;
  d = back_blocks(groups_[2], std::move(d));
  d += d_skip[2];
  d = back_blocks(groups_[1], std::move(d));
  d += d_skip[1];
  d = back_blocks(groups_[0], std::move(d));
  d += d_skip[0];
  return d;
}

Tensor Backbone::stem_backward(const Tensor& d_a1) {
  Tensor d = back_blocks(stem_blocks_, d_a1);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(d))));
}

void Backbone::collect(const std::string& prefix, nn::ParamList& out) {
  if (has_stem_) {
    stem_conv_.collect(prefix + ".stem.conv", out);
    stem_bn_.collect(prefix + ".stem.bn", out);
    for (std::size_t i = 0; i < stem_blocks_.size(); ++i) {
      stem_blocks_[i].collect(prefix + ".stem.block" + std::to_string(i), out);
    }
  }
  for (int g = 0; g < 3; ++g) {
    for (std::size_t b = 0; b < groups_[g].size(); ++b) {
      groups_[g][b].collect(
          prefix + ".trunk.group" + std::to_string(g + 2) + ".block" + std::to_string(b), out);
    }
  }
  for (int i = 0; i < 3; ++i) {
    up_[i].collect(prefix + ".head.up" + std::to_string(i), out);
    up_bn_[i].collect(prefix + ".head.up_bn" + std::to_string(i), out);
    lateral_[i].collect(prefix + ".head.lateral" + std::to_string(i), out);
  }
  out_.collect(prefix + ".head.out", out);
}

}  // namespace cfa
