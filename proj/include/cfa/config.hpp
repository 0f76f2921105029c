#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "cfa/cascade.hpp"
#include "cfa/synthdata.hpp"
#include "cfa/trainer.hpp"

namespace cfa {

struct ModelConfig {
  int stages = 2;
  Preset first_preset = Preset::Mini;
  Preset rest_preset = Preset::Mini;
  int fusion_window = 2;
  FusionMode fusion_mode = FusionMode::Eq5;
  bool phi4_rectified = true;

  CascadeConfig cascade(int image_size, int joints = 16) const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir = "out";

  /// Sets the seed everywhere a seed is consumed.
  void set_seed(std::uint64_t s);

  /// Applies "section.key = value" lines; '#' starts a comment. Unknown keys
  /// and bad values raise ParseError naming the line.
  void apply_text(const std::string& text);
  void apply_file(const std::filesystem::path& path);
  /// Applies one key/value pair.
  void set(const std::string& key, const std::string& value);

  /// Every key, one per line, in a form apply_text accepts.
  std::string echo() const;
  std::vector<std::string> check() const;
};

}  // namespace cfa
