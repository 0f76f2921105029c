#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cfa/poseschema.hpp"

namespace cfa {

struct GroupScore {
  std::string name;
  double fraction = 0.0;  // correct / evaluated, 0 when nothing was evaluated
  int correct = 0;
  int evaluated = 0;
};

struct PCKhReport {
  double alpha = 0.5;
  std::vector<GroupScore> per_joint;  // skeleton eval_groups order
  double total = 0.0;
  int correct = 0;
  int evaluated = 0;
};

/// A visible joint is correct when |pred - gt| <= alpha * head_length.
/// Predictions are matched to annotations by image_id. Total pools every
/// joint that belongs to an eval group.
PCKhReport pckh(const std::vector<PredictionRecord>& preds,
                const std::vector<PersonAnnotation>& gts, const SkeletonSpec& skel,
                double alpha = 0.5);

using LabeledReport = std::pair<std::string, PCKhReport>;

/// Plain-text table: one row per report, one column per joint group plus
/// Total, percentages with two decimals.
std::string report_table(const std::vector<LabeledReport>& reports, const SkeletonSpec& skel);
/// JSON array of {label, per_joint, total}.
std::string report_json(const std::vector<LabeledReport>& reports);

/// "89.26" for 0.8926.
std::string format_percent(double fraction);

}  // namespace cfa
