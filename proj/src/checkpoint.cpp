#include "cfa/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cfa/errors.hpp"
#include "cfa/hash.hpp"

namespace cfa {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

namespace {

constexpr char kMagic[8] = {'C', 'F', 'A', 'C', 'K', 'P', 'T', '1'};

json backbone_json(const BackboneConfig& c) {
  return {{"preset", to_string(c.preset)},
          {"stem_channels", c.stem_channels},
          {"block_channels", c.block_channels},
          {"blocks_per_stage", c.blocks_per_stage},
          {"stem_blocks", c.stem_blocks},
          {"deconv_kernel", c.deconv_kernel},
          {"num_joints", c.num_joints}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  c.preset = parse_preset(j.at("preset").get<std::string>());
  c.stem_channels = j.at("stem_channels").get<int>();
  c.block_channels = j.at("block_channels").get<std::array<int, 3>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::array<int, 3>>();
  c.stem_blocks = j.at("stem_blocks").get<int>();
  c.deconv_kernel = j.at("deconv_kernel").get<int>();
  c.num_joints = j.at("num_joints").get<int>();
  return c;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("truncated checkpoint");
  return v;
}

struct Loaded {
  json manifest;
  std::map<std::string, Tensor> tensors;
};

Loaded read_file(const std::filesystem::path& path, bool with_tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) {
    throw ParseError(path.string() + " is not a checkpoint");
  }
  Loaded out;
  const auto mlen = get<std::uint32_t>(in);
  std::string text(mlen, '\0');
  if (!in.read(text.data(), mlen)) throw ParseError("truncated checkpoint manifest");
  try {
    out.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (!with_tensors) return out;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(in);
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw ParseError("truncated tensor name");
    Shape s{get<std::int32_t>(in), get<std::int32_t>(in), get<std::int32_t>(in),
            get<std::int32_t>(in)};
    Tensor t(s);
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw ParseError("truncated tensor " + name);
    }
    out.tensors.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

void save_checkpoint(Cascade& model, const std::filesystem::path& path,
                     std::optional<std::string> parent_hash) {
  const CascadeConfig& cfg = model.config();
  json m;
  m["format"] = 1;
  m["num_stages"] = cfg.num_stages;
  m["config_hash"] = hex64(fnv1a64(cfg.canonical()));
  json hashes = json::array(), configs = json::array();
  for (const auto& sc : cfg.stage_configs) {
    hashes.push_back(hex64(fnv1a64(sc.canonical())));
    configs.push_back(backbone_json(sc));
  }
  m["stage_config_hashes"] = hashes;
  m["stage_configs"] = configs;
  m["fusion_window"] = cfg.fusion_window;
  m["fusion_mode"] = to_string(cfg.fusion_mode);
  m["phi4_rectified"] = cfg.phi4_rectified;
  m["image_size"] = cfg.image_size;
  m["seed"] = model.seed();
  m["parent_hash"] = parent_hash ? json(*parent_hash) : json(nullptr);
  const std::string text = m.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const nn::ParamList params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const nn::Param* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape& s = p->value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

CheckpointManifest read_manifest(const std::filesystem::path& path) {
  const json m = read_file(path, false).manifest;
  CheckpointManifest out;
  try {
    out.num_stages = m.at("num_stages").get<int>();
    out.config_hash = m.at("config_hash").get<std::string>();
    out.stage_config_hashes = m.at("stage_config_hashes").get<std::vector<std::string>>();
    out.fusion_window = m.at("fusion_window").get<int>();
    out.fusion_mode = m.at("fusion_mode").get<std::string>();
    if (!m.at("parent_hash").is_null()) out.parent_hash = m.at("parent_hash").get<std::string>();
    out.seed = m.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what());
  }
  return out;
}

Cascade load_checkpoint(const std::filesystem::path& path) {
  Loaded f = read_file(path, true);
  CascadeConfig cfg;
  std::uint64_t seed = 0;
  try {
    const json& m = f.manifest;
    cfg.num_stages = m.at("num_stages").get<int>();
    for (const json& sc : m.at("stage_configs")) cfg.stage_configs.push_back(backbone_from_json(sc));
    cfg.fusion_window = m.at("fusion_window").get<int>();
    cfg.fusion_mode = parse_fusion_mode(m.at("fusion_mode").get<std::string>());
    cfg.phi4_rectified = m.at("phi4_rectified").get<bool>();
    cfg.image_size = m.at("image_size").get<int>();
    seed = m.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what());
  }
  Cascade model(cfg, seed);
  for (nn::Param* p : model.parameters()) {
    auto it = f.tensors.find(p->name);
    if (it == f.tensors.end()) throw ParseError("checkpoint lacks tensor " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw ShapeError("checkpoint tensor " + p->name + " has shape " +
                       it->second.shape().str() + ", model expects " + p->value.shape().str());
    }
    p->value = std::move(it->second);
    f.tensors.erase(it);
  }
  if (!f.tensors.empty()) throw ParseError("checkpoint has unknown tensor " + f.tensors.begin()->first);
  return model;
}

}  // namespace cfa
