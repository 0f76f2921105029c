#include "cfa/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

CascadeConfig ModelConfig::cascade(int image_size, int joints) const {
  CascadeConfig c = CascadeConfig::make(stages, first_preset, rest_preset, joints, image_size);
  c.fusion_window = fusion_window;
  c.fusion_mode = fusion_mode;
  c.phi4_rectified = phi4_rectified;
  return c;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  train.seed = s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

long long to_int(const std::string& v) {
  std::size_t used = 0;
  const long long i = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(v);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
  return s;
}

template <typename T, typename F>
std::vector<T> split(const std::string& v, F&& f) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(f(item));
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      {"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"run.deterministic", [](const RunConfig& c) { return fmt_bool(c.deterministic); },
       [](RunConfig& c, const std::string& v) { c.deterministic = to_bool(v); }},
      {"paths.data", [](const RunConfig& c) { return c.data_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
      {"paths.checkpoint", [](const RunConfig& c) { return c.checkpoint.string(); },
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"paths.out", [](const RunConfig& c) { return c.out_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},

      {"synth.seed", [](const RunConfig& c) { return std::to_string(c.synth.seed); },
       [](RunConfig& c, const std::string& v) { c.synth.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"synth.count", [](const RunConfig& c) { return std::to_string(c.synth.count); },
       [](RunConfig& c, const std::string& v) { c.synth.count = static_cast<int>(to_int(v)); }},
      {"synth.image_size", [](const RunConfig& c) { return std::to_string(c.synth.image_size); },
       [](RunConfig& c, const std::string& v) { c.synth.image_size = static_cast<int>(to_int(v)); }},
      {"synth.occlusion_prob", [](const RunConfig& c) { return fmt_double(c.synth.occlusion_prob); },
       [](RunConfig& c, const std::string& v) { c.synth.occlusion_prob = to_double(v); }},
      {"synth.limb_width", [](const RunConfig& c) { return fmt_double(c.synth.limb_width); },
       [](RunConfig& c, const std::string& v) { c.synth.limb_width = to_double(v); }},
      {"synth.pose_jitter", [](const RunConfig& c) { return fmt_double(c.synth.pose_jitter); },
       [](RunConfig& c, const std::string& v) { c.synth.pose_jitter = to_double(v); }},
      {"synth.background", [](const RunConfig& c) { return to_string(c.synth.background); },
       [](RunConfig& c, const std::string& v) { c.synth.background = parse_background(v); }},

      {"model.stages", [](const RunConfig& c) { return std::to_string(c.model.stages); },
       [](RunConfig& c, const std::string& v) { c.model.stages = static_cast<int>(to_int(v)); }},
      {"model.first_preset", [](const RunConfig& c) { return to_string(c.model.first_preset); },
       [](RunConfig& c, const std::string& v) { c.model.first_preset = parse_preset(v); }},
      {"model.rest_preset", [](const RunConfig& c) { return to_string(c.model.rest_preset); },
       [](RunConfig& c, const std::string& v) { c.model.rest_preset = parse_preset(v); }},
      {"model.fusion_window", [](const RunConfig& c) { return std::to_string(c.model.fusion_window); },
       [](RunConfig& c, const std::string& v) { c.model.fusion_window = static_cast<int>(to_int(v)); }},
      {"model.fusion_mode", [](const RunConfig& c) { return to_string(c.model.fusion_mode); },
       [](RunConfig& c, const std::string& v) { c.model.fusion_mode = parse_fusion_mode(v); }},
      {"model.phi4_rectified", [](const RunConfig& c) { return fmt_bool(c.model.phi4_rectified); },
       [](RunConfig& c, const std::string& v) { c.model.phi4_rectified = to_bool(v); }},

      {"train.batch_size", [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
       [](RunConfig& c, const std::string& v) { c.train.batch_size = static_cast<int>(to_int(v)); }},
      {"train.lr", [](const RunConfig& c) { return fmt_double(c.train.lr); },
       [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
      {"train.lr_decay_factor", [](const RunConfig& c) { return fmt_double(c.train.lr_decay_factor); },
       [](RunConfig& c, const std::string& v) { c.train.lr_decay_factor = to_double(v); }},
      {"train.lr_decay_epochs",
       [](const RunConfig& c) { return join(c.train.lr_decay_epochs, [](int e) { return std::to_string(e); }); },
       [](RunConfig& c, const std::string& v) {
         c.train.lr_decay_epochs = split<int>(v, [](const std::string& s) { return static_cast<int>(to_int(s)); });
       }},
      {"train.epochs", [](const RunConfig& c) { return std::to_string(c.train.epochs); },
       [](RunConfig& c, const std::string& v) { c.train.epochs = static_cast<int>(to_int(v)); }},
      {"train.optimizer", [](const RunConfig& c) { return c.train.optimizer; },
       [](RunConfig& c, const std::string& v) { c.train.optimizer = v; }},
      {"train.stage_loss_weights",
       [](const RunConfig& c) { return join(c.train.stage_loss_weights, fmt_double); },
       [](RunConfig& c, const std::string& v) { c.train.stage_loss_weights = split<double>(v, to_double); }},
      {"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"train.augment", [](const RunConfig& c) { return fmt_bool(c.train.augment); },
       [](RunConfig& c, const std::string& v) { c.train.augment = to_bool(v); }},
      {"train.max_iterations", [](const RunConfig& c) { return std::to_string(c.train.max_iterations); },
       [](RunConfig& c, const std::string& v) { c.train.max_iterations = static_cast<int>(to_int(v)); }},
      {"train.sigma", [](const RunConfig& c) { return fmt_double(c.train.sigma); },
       [](RunConfig& c, const std::string& v) { c.train.sigma = to_double(v); }},
      {"train.stride", [](const RunConfig& c) { return std::to_string(c.train.stride); },
       [](RunConfig& c, const std::string& v) { c.train.stride = static_cast<int>(to_int(v)); }},
      {"train.num_workers", [](const RunConfig& c) { return std::to_string(c.train.num_workers); },
       [](RunConfig& c, const std::string& v) { c.train.num_workers = static_cast<int>(to_int(v)); }},

      {"eval.flip_test", [](const RunConfig& c) { return fmt_bool(c.eval.use_flip_test); },
       [](RunConfig& c, const std::string& v) { c.eval.use_flip_test = to_bool(v); }},
      {"eval.fusion_window", [](const RunConfig& c) { return std::to_string(c.eval.fusion_window); },
       [](RunConfig& c, const std::string& v) { c.eval.fusion_window = static_cast<int>(to_int(v)); }},
      {"eval.fusion_mode", [](const RunConfig& c) { return to_string(c.eval.fusion_mode); },
       [](RunConfig& c, const std::string& v) { c.eval.fusion_mode = parse_fusion_mode(v); }},
      {"eval.alpha", [](const RunConfig& c) { return fmt_double(c.eval.alpha); },
       [](RunConfig& c, const std::string& v) { c.eval.alpha = to_double(v); }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Key& k : keys()) {
    if (key != k.name) continue;
    try {
      k.set(*this, value);
    } catch (const DomainError& e) {
      throw ParseError("bad value for " + key + ": " + e.what());
    } catch (const std::exception&) {
      throw ParseError("bad value for " + key + ": '" + value + "'");
    }
    return;
  }
  throw ParseError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ParseError& e) {
      throw ParseError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

std::string RunConfig::echo() const {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::check() const {
  std::vector<std::string> out = synth.check();
  for (auto& p : model.cascade(synth.image_size).check()) out.push_back(p);
  for (auto& p : train.check()) out.push_back(p);
  if (eval.fusion_window < 1 || eval.fusion_window > model.stages) {
    out.push_back("eval.fusion_window must lie in [1, model.stages]");
  }
  if (!(eval.alpha > 0)) out.push_back("eval.alpha must be positive");
  return out;
}

}  // namespace cfa
