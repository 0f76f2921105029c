#include "cfa/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "cfa/errors.hpp"

namespace cfa {

PCKhReport pckh(const std::vector<PredictionRecord>& preds,
                const std::vector<PersonAnnotation>& gts, const SkeletonSpec& skel,
                double alpha) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) by_id[p.image_id] = &p;
  std::string missing;
  for (const auto& g : gts) {
    if (!by_id.contains(g.image_id)) missing += (missing.empty() ? "" : ", ") + g.image_id;
  }
  if (!missing.empty()) throw DomainError("no prediction for image ids: " + missing);

  PCKhReport r;
  r.alpha = alpha;
  for (const auto& group : skel.eval_groups) r.per_joint.push_back({group.name});
  for (const auto& g : gts) {
    if (!(g.head_length > 0)) throw DomainError("head_length must be positive for " + g.image_id);
    const PredictionRecord& p = *by_id.at(g.image_id);
    if (p.keypoints.size() != g.keypoints.size()) {
      throw DomainError("joint count mismatch for " + g.image_id);
    }
    const double threshold = alpha * g.head_length;
    for (std::size_t gi = 0; gi < skel.eval_groups.size(); ++gi) {
      for (int j : skel.eval_groups[gi].joints) {
        if (!g.visibility[j]) continue;
        const double d = std::hypot(p.keypoints[j].x - g.keypoints[j].x,
                                    p.keypoints[j].y - g.keypoints[j].y);
        const bool ok = d <= threshold;
        r.per_joint[gi].evaluated += 1;
        r.per_joint[gi].correct += ok;
        r.evaluated += 1;
        r.correct += ok;
      }
    }
  }
  for (auto& gs : r.per_joint) {
    gs.fraction = gs.evaluated ? static_cast<double>(gs.correct) / gs.evaluated : 0.0;
  }
  r.total = r.evaluated ? static_cast<double>(r.correct) / r.evaluated : 0.0;
  return r;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string report_table(const std::vector<LabeledReport>& reports, const SkeletonSpec& skel) {
  std::size_t label_w = 8;
  for (const auto& [label, _] : reports) label_w = std::max(label_w, label.size());
  auto cell = [](const std::string& s, std::size_t w) {
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };
  std::string out = std::string(label_w, ' ');
  for (const auto& g : skel.eval_groups) out += cell(g.name, 10);
  out += cell("Total", 10) + "\n";
  for (const auto& [label, r] : reports) {
    out += label + std::string(label_w - label.size(), ' ');
    for (const auto& gs : r.per_joint) out += cell(format_percent(gs.fraction), 10);
    out += cell(format_percent(r.total), 10) + "\n";
  }
  return out;
}

std::string report_json(const std::vector<LabeledReport>& reports) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& [label, r] : reports) {
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& gs : r.per_joint) per[gs.name] = gs.fraction;
    doc.push_back({{"label", label}, {"per_joint", per}, {"total", r.total}});
  }
  return doc.dump(1) + "\n";
}

}  // namespace cfa
