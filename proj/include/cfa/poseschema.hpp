#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfa/tensor.hpp"

namespace cfa {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Coordinates stored for joints that are not visible.
inline constexpr Point kInvisiblePoint{-1.0, -1.0};

/// Named subset of joints pooled into one PCKh column.
struct JointGroup {
  std::string name;
  std::vector<int> joints;
  bool operator==(const JointGroup&) const = default;
};

struct SkeletonSpec {
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> flip_pairs;
  std::vector<std::pair<int, int>> limbs;
  /// PCKh columns. Joints outside every group are not evaluated.
  std::vector<JointGroup> eval_groups;

  int num_joints() const { return static_cast<int>(joint_names.size()); }

  /// perm[i] is the joint that i becomes under a horizontal mirror.
  std::vector<int> flip_permutation() const;

  /// Empty when the skeleton is well formed, otherwise one line per problem.
  std::vector<std::string> check() const;
};

/// The 16-joint MPII layout:
/// 0 r_ankle, 1 r_knee, 2 r_hip, 3 l_hip, 4 l_knee, 5 l_ankle, 6 pelvis,
/// 7 thorax, 8 upper_neck, 9 head_top, 10 r_wrist, 11 r_elbow,
/// 12 r_shoulder, 13 l_shoulder, 14 l_elbow, 15 l_wrist.
const SkeletonSpec& mpii_skeleton();

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

struct PersonAnnotation {
  std::string image_id;
  std::string image_path;  // empty when absent
  std::vector<Point> keypoints;
  std::vector<bool> visibility;
  double head_length = 0.0;
  std::optional<BBox> bbox;

  int num_joints() const { return static_cast<int>(keypoints.size()); }
  bool operator==(const PersonAnnotation&) const = default;
};

struct PoseSample {
  Tensor image;  // [1, 3, H, W], values in [0, 1]
  PersonAnnotation annotation;
};

struct PredictionRecord {
  std::string image_id;
  std::vector<Point> keypoints;
  std::vector<double> scores;
  bool operator==(const PredictionRecord&) const = default;
};

struct ImageBounds {
  double width = 0;
  double height = 0;
};

struct Violation {
  std::string field;
  std::string message;
};

/// Every violated invariant; an empty result means the annotation is valid.
std::vector<Violation> validate_annotation(const PersonAnnotation& ann,
                                           const SkeletonSpec& skel,
                                           std::optional<ImageBounds> bounds = {});

std::vector<PersonAnnotation> load_annotations(const std::filesystem::path& path,
                                               const SkeletonSpec& skel = mpii_skeleton());
void save_annotations(const std::vector<PersonAnnotation>& anns,
                      const std::filesystem::path& path);

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path);

}  // namespace cfa
