#include "cfa/poseschema.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cfa/errors.hpp"

namespace cfa {

using nlohmann::json;

std::vector<int> SkeletonSpec::flip_permutation() const {
  std::vector<int> perm(num_joints());
  for (int i = 0; i < num_joints(); ++i) perm[i] = i;
  for (auto [l, r] : flip_pairs) {
    perm[l] = r;
    perm[r] = l;
  }
  return perm;
}

std::vector<std::string> SkeletonSpec::check() const {
  std::vector<std::string> problems;
  const int p = num_joints();
  auto in_range = [p](int i) { return i >= 0 && i < p; };
  std::set<int> seen;
  for (auto [l, r] : flip_pairs) {
    if (!in_range(l) || !in_range(r)) {
      problems.push_back("flip pair index out of range");
      continue;
    }
    if (l == r) problems.push_back("flip pair maps a joint to itself");
    if (!seen.insert(l).second || !seen.insert(r).second) {
      problems.push_back("joint appears in two flip pairs");
    }
  }
  for (auto [a, b] : limbs) {
    if (!in_range(a) || !in_range(b)) problems.push_back("limb index out of range");
  }
  for (const auto& g : eval_groups) {
    for (int j : g.joints) {
      if (!in_range(j)) problems.push_back("eval group '" + g.name + "' index out of range");
    }
  }
  return problems;
}

const SkeletonSpec& mpii_skeleton() {
  static const SkeletonSpec spec{
      {"r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis", "thorax",
       "upper_neck", "head_top", "r_wrist", "r_elbow", "r_shoulder", "l_shoulder",
       "l_elbow", "l_wrist"},
      {{0, 5}, {1, 4}, {2, 3}, {10, 15}, {11, 14}, {12, 13}},
      {{6, 2}, {2, 1}, {1, 0}, {6, 3}, {3, 4}, {4, 5}, {6, 7}, {7, 8}, {8, 9},
       {7, 12}, {12, 11}, {11, 10}, {7, 13}, {13, 14}, {14, 15}},
      {{"Head", {8, 9}},
       {"Shoulder", {12, 13}},
       {"Elbow", {11, 14}},
       {"Wrist", {10, 15}},
       {"Hip", {2, 3}},
       {"Knee", {1, 4}},
       {"Ankle", {0, 5}}},
  };
  return spec;
}

std::vector<Violation> validate_annotation(const PersonAnnotation& ann,
                                           const SkeletonSpec& skel,
                                           std::optional<ImageBounds> bounds) {
  std::vector<Violation> out;
  const int p = skel.num_joints();
  if (ann.num_joints() != p) {
    out.push_back({"keypoints", "keypoint count " + std::to_string(ann.num_joints()) +
                                    " != " + std::to_string(p)});
  }
  if (static_cast<int>(ann.visibility.size()) != ann.num_joints()) {
    out.push_back({"visibility", "visibility count " + std::to_string(ann.visibility.size()) +
                                     " != keypoint count " +
                                     std::to_string(ann.num_joints())});
  }
  if (!(ann.head_length > 0.0) || !std::isfinite(ann.head_length)) {
    out.push_back({"head_length", "head_length must be positive"});
  }
  const std::size_t n = std::min(ann.keypoints.size(), ann.visibility.size());
  for (std::size_t j = 0; j < n; ++j) {
    if (!ann.visibility[j]) continue;
    const Point& k = ann.keypoints[j];
    if (!std::isfinite(k.x) || !std::isfinite(k.y)) {
      out.push_back({"keypoints", "joint " + std::to_string(j) + " not finite"});
    } else if (bounds &&
               (k.x < 0 || k.y < 0 || k.x >= bounds->width || k.y >= bounds->height)) {
      out.push_back({"keypoints", "joint " + std::to_string(j) + " out of bounds"});
    }
  }
  return out;
}

namespace {

json read_json_array(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(path.string() + ": top level is not an array");
  return doc;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

[[noreturn]] void fail(std::size_t index, const std::string& field, const std::string& what) {
  throw ParseError("record " + std::to_string(index) + ": field '" + field + "' " + what);
}

const json& field(const json& rec, std::size_t index, const char* name) {
  auto it = rec.find(name);
  if (it == rec.end()) fail(index, name, "missing");
  return *it;
}

double number(const json& v, std::size_t index, const std::string& name) {
  if (!v.is_number()) fail(index, name, "is not a number");
  return v.get<double>();
}

std::vector<Point> parse_points(const json& v, std::size_t index, const char* name) {
  if (!v.is_array()) fail(index, name, "is not an array");
  std::vector<Point> pts;
  pts.reserve(v.size());
  for (const json& pair : v) {
    if (!pair.is_array() || pair.size() != 2) fail(index, name, "entry is not an [x, y] pair");
    pts.push_back({number(pair[0], index, name), number(pair[1], index, name)});
  }
  return pts;
}

json points_json(const std::vector<Point>& pts) {
  json arr = json::array();
  for (const Point& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

}  // namespace

std::vector<PersonAnnotation> load_annotations(const std::filesystem::path& path,
                                               const SkeletonSpec& skel) {
  const json doc = read_json_array(path);
  std::vector<PersonAnnotation> anns;
  anns.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& rec = doc[i];
    if (!rec.is_object()) fail(i, "record", "is not an object");
    PersonAnnotation a;
    const json& id = field(rec, i, "image_id");
    if (!id.is_string()) fail(i, "image_id", "is not a string");
    a.image_id = id.get<std::string>();
    if (auto it = rec.find("image_path"); it != rec.end()) {
      if (!it->is_string()) fail(i, "image_path", "is not a string");
      a.image_path = it->get<std::string>();
    }
    a.keypoints = parse_points(field(rec, i, "keypoints"), i, "keypoints");
    const json& vis = field(rec, i, "visibility");
    if (!vis.is_array()) fail(i, "visibility", "is not an array");
    for (const json& v : vis) {
      if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
        fail(i, "visibility", "entries must be 0 or 1");
      }
      a.visibility.push_back(v.get<int>() == 1);
    }
    a.head_length = number(field(rec, i, "head_length"), i, "head_length");
    if (auto it = rec.find("bbox"); it != rec.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != 4) fail(i, "bbox", "must be [x, y, w, h]");
      a.bbox = BBox{number((*it)[0], i, "bbox"), number((*it)[1], i, "bbox"),
                    number((*it)[2], i, "bbox"), number((*it)[3], i, "bbox")};
    }
    if (auto v = validate_annotation(a, skel); !v.empty()) {
      fail(i, v.front().field, v.front().message);
    }
    anns.push_back(std::move(a));
  }
  return anns;
}

void save_annotations(const std::vector<PersonAnnotation>& anns,
                      const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& a : anns) {
    json rec;
    rec["image_id"] = a.image_id;
    if (!a.image_path.empty()) rec["image_path"] = a.image_path;
    rec["keypoints"] = points_json(a.keypoints);
    json vis = json::array();
    for (bool v : a.visibility) vis.push_back(v ? 1 : 0);
    rec["visibility"] = vis;
    rec["head_length"] = a.head_length;
    if (a.bbox) rec["bbox"] = {a.bbox->x, a.bbox->y, a.bbox->w, a.bbox->h};
    doc.push_back(std::move(rec));
  }
  write_text(path, doc.dump(1) + "\n");
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  const json doc = read_json_array(path);
  std::vector<PredictionRecord> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& rec = doc[i];
    if (!rec.is_object()) fail(i, "record", "is not an object");
    PredictionRecord r;
    const json& id = field(rec, i, "image_id");
    if (!id.is_string()) fail(i, "image_id", "is not a string");
    r.image_id = id.get<std::string>();
    r.keypoints = parse_points(field(rec, i, "keypoints"), i, "keypoints");
    const json& scores = field(rec, i, "scores");
    if (!scores.is_array()) fail(i, "scores", "is not an array");
    for (const json& s : scores) r.scores.push_back(number(s, i, "scores"));
    if (r.scores.size() != r.keypoints.size()) fail(i, "scores", "count differs from keypoints");
    out.push_back(std::move(r));
  }
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& r : records) {
    doc.push_back({{"image_id", r.image_id},
                   {"keypoints", points_json(r.keypoints)},
                   {"scores", r.scores}});
  }
  write_text(path, doc.dump(1) + "\n");
}

}  // namespace cfa
