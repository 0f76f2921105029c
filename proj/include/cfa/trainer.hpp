#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfa/cascade.hpp"
#include "cfa/heatmap.hpp"
#include "cfa/metrics.hpp"
#include "cfa/poseschema.hpp"
#include "cfa/synthdata.hpp"

namespace cfa {

struct TrainConfig {
  int batch_size = 64;
  double lr = 5e-4;
  double lr_decay_factor = 0.3;
  std::vector<int> lr_decay_epochs{6, 10, 13};  // decay after these epochs (1-indexed)
  int epochs = 16;
  std::string optimizer = "adam";
  std::vector<double> stage_loss_weights;  // empty: 1 for every stage
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentRanges augment_ranges;
  int max_iterations = 0;  // 0: no cap
  double sigma = 2.0;
  int stride = 4;
  int num_workers = 1;  // batch preparation threads

  std::vector<std::string> check() const;
};

struct EvalConfig {
  bool use_flip_test = true;
  int fusion_window = 1;
  FusionMode fusion_mode = FusionMode::Eq5;
  double alpha = 0.5;
  double sigma = 2.0;
  int stride = 4;
};

/// Learning rate in effect during `epoch` (1-indexed): the base rate times
/// decay_factor for every listed epoch strictly before it.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Per-sample, per-joint visibility of a batch.
using VisibilityMask = std::vector<std::vector<bool>>;

struct LossResult {
  double value = 0.0;
  std::vector<Tensor> d_stages;  // dL/dy_j
};

/// sum_j w_j * MSE(y_j, target), the MSE averaged over visible channels and
/// all their cells. The fused map does not enter.
LossResult heatmap_loss(const std::vector<Tensor>& stages, const Tensor& target,
                        const std::vector<double>& weights, const VisibilityMask& visibility);

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const nn::ParamList& params, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct IterationLog {
  int epoch = 0;
  int iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
};

struct TrainLog {
  std::vector<IterationLog> iterations;
  std::vector<EpochLog> epochs;

  /// Lines "epoch, iteration, lr, loss".
  std::string text() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Called after every epoch with the model and the epoch number.
using EpochCallback = std::function<void(Cascade&, int)>;

/// Trains in place. Batches are drawn from a per-epoch shuffle of
/// (seed, epoch); augmentation of sample i in epoch e depends only on
/// (seed, e, i), so worker count does not change results.
TrainLog train(Cascade& model, const std::vector<PoseSample>& dataset, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {});

/// Stage heatmaps per sample: maps[i][j] is stage j of sample i. With
/// `flip_test`, each stage map is flip_average'd with the prediction on the
/// mirrored image.
std::vector<std::vector<Heatmap>> infer_stage_maps(Cascade& model, const std::vector<Tensor>& images,
                                                   bool flip_test, const SkeletonSpec& skel);

struct EvalResult {
  std::vector<PCKhReport> per_stage;
  PCKhReport fused;
  std::vector<PredictionRecord> predictions;  // from the fused maps
};

/// Scores precomputed stage maps: decode each stage for per-stage reports,
/// fuse the last `fusion_window` stages and decode for the final predictions.
EvalResult score_stage_maps(const std::vector<std::vector<Heatmap>>& maps,
                            const std::vector<PersonAnnotation>& gts, const EvalConfig& cfg,
                            const SkeletonSpec& skel);

/// Fused predictions only; `ids` name the records.
std::vector<PredictionRecord> predict_from_maps(const std::vector<std::vector<Heatmap>>& maps,
                                                const std::vector<std::string>& ids,
                                                const EvalConfig& cfg);

EvalResult evaluate(Cascade& model, const std::vector<PoseSample>& dataset, const EvalConfig& cfg,
                    const SkeletonSpec& skel = mpii_skeleton());

/// Horizontal mirror of a [1, 3, H, W] image (pixel x -> W - 1 - x).
Tensor mirror_image(const Tensor& image);

/// Batch of images and Gaussian targets for the given samples.
struct Batch {
  Tensor images;
  Tensor targets;
  VisibilityMask visibility;
};
Batch make_batch(const std::vector<const PoseSample*>& samples, const HeatmapGeometry& geom);

/// Worker count from CFA_NUM_WORKERS, capped at `requested` (>= 1).
int workers_from_env(int requested);

}  // namespace cfa
