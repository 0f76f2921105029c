#include "cfa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "cfa/errors.hpp"
#include "cfa/synthdata.hpp"

namespace cfa {

std::vector<std::string> TrainConfig::check() const {
  std::vector<std::string> out;
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (!(lr > 0)) out.push_back("lr must be positive");
  if (!(lr_decay_factor > 0 && lr_decay_factor < 1)) {
    out.push_back("lr_decay_factor must lie in (0, 1)");
  }
  if (epochs < 0) out.push_back("epochs must be >= 0");
  if (optimizer != "adam") out.push_back("optimizer must be adam");
  if (!stage_loss_weights.empty()) {
    bool any = false;
    for (double w : stage_loss_weights) {
      if (w < 0) out.push_back("stage loss weights must be >= 0");
      any = any || w > 0;
    }
    if (!any) out.push_back("at least one stage loss weight must be positive");
  }
  if (max_iterations < 0) out.push_back("max_iterations must be >= 0");
  if (!(sigma > 0)) out.push_back("sigma must be positive");
  if (stride < 1) out.push_back("stride must be >= 1");
  const AugmentRanges& a = augment_ranges;
  if (!(a.max_rotation >= 0)) out.push_back("augment max_rotation must be >= 0");
  if (!(a.min_scale > 0 && a.min_scale <= a.max_scale)) {
    out.push_back("augment scale range must satisfy 0 < min <= max");
  }
  if (!(a.flip_prob >= 0 && a.flip_prob <= 1)) out.push_back("augment flip_prob must lie in [0, 1]");
  if (!(a.color >= 0)) out.push_back("augment color must be >= 0");
  return out;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int e : cfg.lr_decay_epochs) {
    if (e < epoch) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

LossResult heatmap_loss(const std::vector<Tensor>& stages, const Tensor& target,
                        const std::vector<double>& weights, const VisibilityMask& visibility) {
  if (weights.size() != stages.size()) {
    throw DomainError("need one loss weight per stage (" + std::to_string(stages.size()) + ")");
  }
  const int n = target.n(), p = target.c();
  if (static_cast<int>(visibility.size()) != n) throw DomainError("visibility mask batch mismatch");
  int visible = 0;
  for (const auto& v : visibility) {
    if (static_cast<int>(v.size()) != p) throw DomainError("visibility mask joint mismatch");
    visible += static_cast<int>(std::count(v.begin(), v.end(), true));
  }
  if (visible == 0) throw DomainError("loss is undefined without visible joints");
  if (std::none_of(weights.begin(), weights.end(), [](double w) { return w > 0; })) {
    throw DomainError("all stage loss weights are zero");
  }
  const std::size_t cells = static_cast<std::size_t>(target.h()) * target.w();
  const double denom = static_cast<double>(visible) * static_cast<double>(cells);
  LossResult r;
  for (std::size_t j = 0; j < stages.size(); ++j) {
    const Tensor& y = stages[j];
    require_same_shape(y, target, "loss stage " + std::to_string(j + 1));
    Tensor d(y.shape());
    // Extended accumulator: the sum spans every visible cell in the batch.
    long double sum = 0.0;
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < p; ++k) {
        if (!visibility[b][k]) continue;
        const double* yp = y.plane(b, k);
        const double* tp = target.plane(b, k);
        double* dp = d.plane(b, k);
        for (std::size_t i = 0; i < cells; ++i) {
          const double e = yp[i] - tp[i];
          sum += e * e;
          dp[i] = 2.0 * weights[j] * e / denom;
        }
      }
    }
    r.value += weights[j] * static_cast<double>(sum) / denom;
    r.d_stages.push_back(std::move(d));
  }
  return r;
}

void Adam::step(const nn::ParamList& params, double lr) {
  if (m_.empty()) {
    for (const nn::Param* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw DomainError("Adam parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Param& p = *params[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::string TrainLog::text() const {
  std::ostringstream out;
  out.precision(10);
  for (const auto& it : iterations) {
    out << it.epoch << ", " << it.iteration << ", " << it.lr << ", " << it.loss << "\n";
  }
  return out.str();
}

int workers_from_env(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("CFA_NUM_WORKERS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

Tensor mirror_image(const Tensor& image) {
  Tensor out(image.shape());
  const int w = image.w();
  for (int n = 0; n < image.n(); ++n) {
    for (int c = 0; c < image.c(); ++c) {
      for (int y = 0; y < image.h(); ++y) {
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, y, w - 1 - x);
      }
    }
  }
  return out;
}

Batch make_batch(const std::vector<const PoseSample*>& samples, const HeatmapGeometry& geom) {
  std::vector<Tensor> images, targets;
  Batch b;
  for (const PoseSample* s : samples) {
    images.push_back(s->image);
    targets.push_back(encode(s->annotation.keypoints, s->annotation.visibility, geom).tensor());
    b.visibility.push_back(s->annotation.visibility);
  }
  b.images = Tensor::concat(images);
  b.targets = Tensor::concat(targets);
  return b;
}

namespace {

std::mt19937_64 keyed_rng(std::uint64_t seed, int a, int b, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), tag};
  return std::mt19937_64(seq);
}

template <typename F>
void parallel_for(int count, int workers, F&& fn) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

TrainLog train(Cascade& model, const std::vector<PoseSample>& dataset, const TrainConfig& cfg,
               const EpochCallback& on_epoch) {
  if (auto problems = cfg.check(); !problems.empty()) {
    throw DomainError("invalid train config: " + problems.front());
  }
  if (dataset.empty()) throw DomainError("training dataset is empty");
  const int m = model.num_stages();
  std::vector<double> weights = cfg.stage_loss_weights;
  if (weights.empty()) weights.assign(m, 1.0);
  if (static_cast<int>(weights.size()) != m) {
    throw DomainError("stage_loss_weights has " + std::to_string(weights.size()) +
                      " entries for " + std::to_string(m) + " stages");
  }
  const HeatmapGeometry geom =
      HeatmapGeometry::for_image(model.config().image_size, cfg.stride, cfg.sigma);
  const int workers = workers_from_env(cfg.num_workers);
  nn::ParamList params;
  for (nn::Param* p : model.parameters()) {
    if (p->trainable) params.push_back(p);
  }
  Adam adam;
  TrainLog log;
  int iteration = 0;
  const int count = static_cast<int>(dataset.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = keyed_rng(cfg.seed, epoch, 0, 0x0DE5u);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    bool capped = false;
    for (int start = 0; start < count; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, count - start);
      std::vector<PoseSample> augmented(cfg.augment ? bs : 0);
      std::vector<const PoseSample*> members(bs);
      parallel_for(bs, workers, [&](int i) {
        const int idx = order[start + i];
        if (cfg.augment) {
          auto rng = keyed_rng(cfg.seed, epoch, idx, 0xA06u);
          augmented[i] = augment(dataset[idx], sample_augment(rng, cfg.augment_ranges));
          members[i] = &augmented[i];
        } else {
          members[i] = &dataset[idx];
        }
      });
      Batch batch = make_batch(members, geom);
      const bool any_visible = std::any_of(batch.visibility.begin(), batch.visibility.end(),
                                           [](const std::vector<bool>& v) {
                                             return std::find(v.begin(), v.end(), true) != v.end();
                                           });
      if (!any_visible) continue;  // augmentation pushed every joint out of frame
      CascadeOutput out = model.forward(batch.images, nn::Mode::Train);
      LossResult loss = heatmap_loss(out.stages, batch.targets, weights, batch.visibility);
      ++iteration;
      if (!std::isfinite(loss.value)) {
        throw TrainingDiverged("loss became " + std::to_string(loss.value) + " at epoch " +
                               std::to_string(epoch) + ", iteration " +
                               std::to_string(iteration) + " (lr " + std::to_string(lr) + ")");
      }
      nn::zero_grads(params);
      model.backward(loss.d_stages);
      adam.step(params, lr);
      log.iterations.push_back({epoch, iteration, lr, loss.value});
      epoch_loss += loss.value;
      ++batches;
      if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) {
        capped = true;
        break;
      }
    }
    log.epochs.push_back({epoch, lr, batches ? epoch_loss / batches : 0.0});
    if (on_epoch) on_epoch(model, epoch);
    if (capped) break;
  }
  return log;
}

std::vector<std::vector<Heatmap>> infer_stage_maps(Cascade& model, const std::vector<Tensor>& images,
                                                   bool flip_test, const SkeletonSpec& skel) {
  constexpr int kChunk = 16;
  std::vector<std::vector<Heatmap>> maps;
  maps.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    std::vector<Tensor> chunk(images.begin() + start, images.begin() + end);
    const Tensor batch = Tensor::concat(chunk);
    CascadeOutput out = model.forward(batch, nn::Mode::Eval);
    CascadeOutput flipped;
    if (flip_test) flipped = model.forward(mirror_image(batch), nn::Mode::Eval);
    for (int b = 0; b < batch.n(); ++b) {
      std::vector<Heatmap> per_stage;
      for (int j = 0; j < model.num_stages(); ++j) {
        Heatmap hm = out.stage_heatmap(j, b);
        if (flip_test) hm = flip_average(hm, flipped.stage_heatmap(j, b), skel);
        per_stage.push_back(std::move(hm));
      }
      maps.push_back(std::move(per_stage));
    }
  }
  return maps;
}

namespace {

HeatmapGeometry geometry_of(const Heatmap& hm, const EvalConfig& cfg) {
  return {hm.height(), hm.width(), cfg.stride, cfg.sigma};
}

PredictionRecord to_record(const std::string& id, const DecodedPose& d) {
  return {id, d.keypoints, d.scores};
}

Heatmap fused_map(const std::vector<Heatmap>& stages, const EvalConfig& cfg) {
  const int m = static_cast<int>(stages.size());
  if (cfg.fusion_window < 1 || cfg.fusion_window > m) {
    throw DomainError("fusion window " + std::to_string(cfg.fusion_window) + " outside [1, " +
                      std::to_string(m) + "]");
  }
  return fuse(std::span<const Heatmap>(stages).last(cfg.fusion_window), cfg.fusion_mode);
}

}  // namespace

std::vector<PredictionRecord> predict_from_maps(const std::vector<std::vector<Heatmap>>& maps,
                                                const std::vector<std::string>& ids,
                                                const EvalConfig& cfg) {
  if (maps.size() != ids.size()) throw DomainError("one id per sample required");
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Heatmap fused = fused_map(maps[i], cfg);
    out.push_back(to_record(ids[i], decode(fused, geometry_of(fused, cfg))));
  }
  return out;
}

EvalResult score_stage_maps(const std::vector<std::vector<Heatmap>>& maps,
                            const std::vector<PersonAnnotation>& gts, const EvalConfig& cfg,
                            const SkeletonSpec& skel) {
  if (maps.size() != gts.size()) throw DomainError("one annotation per sample required");
  EvalResult r;
  if (maps.empty()) return r;
  const int m = static_cast<int>(maps.front().size());
  for (int j = 0; j < m; ++j) {
    std::vector<PredictionRecord> preds;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const Heatmap& hm = maps[i].at(j);
      preds.push_back(to_record(gts[i].image_id, decode(hm, geometry_of(hm, cfg))));
    }
    r.per_stage.push_back(pckh(preds, gts, skel, cfg.alpha));
  }
  std::vector<std::string> ids;
  for (const auto& g : gts) ids.push_back(g.image_id);
  r.predictions = predict_from_maps(maps, ids, cfg);
  r.fused = pckh(r.predictions, gts, skel, cfg.alpha);
  return r;
}

EvalResult evaluate(Cascade& model, const std::vector<PoseSample>& dataset, const EvalConfig& cfg,
                    const SkeletonSpec& skel) {
  std::vector<Tensor> images;
  std::vector<PersonAnnotation> gts;
  for (const auto& s : dataset) {
    images.push_back(s.image);
    gts.push_back(s.annotation);
  }
  return score_stage_maps(infer_stage_maps(model, images, cfg.use_flip_test, skel), gts, cfg, skel);
}

}  // namespace cfa
