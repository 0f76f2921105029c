#include "cfa/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cfa/checkpoint.hpp"
#include "cfa/config.hpp"
#include "cfa/errors.hpp"
#include "cfa/hash.hpp"
#include "cfa/image_io.hpp"
#include "cfa/metrics.hpp"

namespace cfa {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::optional<long long> seed;
  bool deterministic = false;
  std::optional<int> stages;
  std::optional<int> fusion_window;
  std::optional<std::string> fusion_mode;
  std::optional<bool> flip_test;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> checkpoint;
  std::optional<int> count;
  std::optional<int> epochs;
  std::vector<std::string> sets;
  // eval-only
  std::string predictions;
  std::string annotations;
  bool plots = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Config file (section.key = value lines)");
  cmd->add_option("--seed", f.seed, "Seed for data, initialisation and training");
  cmd->add_flag("--deterministic", f.deterministic, "Single-threaded, reproducible execution");
  cmd->add_option("--stages", f.stages, "Number of cascade stages");
  cmd->add_option("--fusion-window", f.fusion_window, "Trailing stages fused at inference");
  cmd->add_option("--fusion-mode", f.fusion_mode, "eq5 or mean")
      ->check(CLI::IsMember({"eq5", "mean"}));
  cmd->add_flag("--flip-test,!--no-flip-test", f.flip_test, "Average with the mirrored image");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--data", f.data, "Dataset directory (annotations.json + images)");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  cmd->add_option("--count", f.count, "Number of synthetic samples");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--set", f.sets, "Override any config key: --set train.lr=1e-3");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.apply_file(f.config);
  if (f.seed) cfg.set_seed(static_cast<std::uint64_t>(*f.seed));
  if (f.deterministic) cfg.deterministic = true;
  if (f.stages) cfg.model.stages = *f.stages;
  if (f.fusion_window) {
    cfg.model.fusion_window = *f.fusion_window;
    cfg.eval.fusion_window = *f.fusion_window;
  }
  if (f.fusion_mode) {
    cfg.model.fusion_mode = parse_fusion_mode(*f.fusion_mode);
    cfg.eval.fusion_mode = cfg.model.fusion_mode;
  }
  if (f.flip_test) cfg.eval.use_flip_test = *f.flip_test;
  if (f.out) cfg.out_dir = *f.out;
  if (f.data) cfg.data_dir = *f.data;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.count) cfg.synth.count = *f.count;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (cfg.deterministic) cfg.train.num_workers = 1;
  return cfg;
}

void require_valid(const RunConfig& cfg) {
  if (auto problems = cfg.check(); !problems.empty()) throw DomainError(problems.front());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

/// Logs the resolved config; with `to_file` also saves it next to the outputs.
void echo_config(const RunConfig& cfg, bool to_file = true) {
  const std::string text = cfg.echo();
  if (to_file) {
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "resolved_config.txt", text);
  }
  std::clog << "# resolved config\n" << text;
}

std::vector<PoseSample> load_samples(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return read_dataset(cfg.data_dir);
  return generate_dataset(cfg.synth);
}

TrainLog train_and_save(Cascade& model, const std::vector<PoseSample>& data, const RunConfig& cfg,
                        std::optional<std::string> parent_hash) {
  const fs::path dir = cfg.out_dir;
  TrainLog log = train(model, data, cfg.train, [&](Cascade& m, int epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
    save_checkpoint(m, dir / name, parent_hash);
  });
  save_checkpoint(model, dir / "model.ckpt", parent_hash);
  write_text(dir / "train_log.txt", log.text());
  for (const auto& e : log.epochs) {
    std::clog << "epoch " << e.epoch << " lr " << e.lr << " mean loss " << e.mean_loss << "\n";
  }
  return log;
}

int cmd_synth(const RunConfig& cfg) {
  if (auto p = cfg.synth.check(); !p.empty()) throw DomainError(p.front());
  // The dataset directory holds data only.
  echo_config(cfg, false);
  write_dataset(generate_dataset(cfg.synth), cfg.out_dir);
  std::cout << "wrote " << cfg.synth.count << " samples to " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  require_valid(cfg);
  echo_config(cfg);
  const auto data = load_samples(cfg);
  const int size = data.front().image.h();
  Cascade model(cfg.model.cascade(size), cfg.seed);
  train_and_save(model, data, cfg, std::nullopt);
  std::cout << "checkpoint " << (cfg.out_dir / "model.ckpt").string() << " "
            << file_hash(cfg.out_dir / "model.ckpt") << "\n";
  return 0;
}

int cmd_grow(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw DomainError("grow needs --checkpoint");
  echo_config(cfg);
  if (auto p = cfg.train.check(); !p.empty()) throw DomainError(p.front());
  Cascade parent = load_checkpoint(cfg.checkpoint);
  const std::string parent_hash = file_hash(cfg.checkpoint);
  const int joints = parent.config().stage_configs.front().num_joints;
  Cascade model = grow_cascade(parent, BackboneConfig::from_preset(cfg.model.rest_preset, joints),
                               cfg.seed);
  const auto data = load_samples(cfg);
  RunConfig run = cfg;
  if (!run.train.stage_loss_weights.empty() &&
      static_cast<int>(run.train.stage_loss_weights.size()) != model.num_stages()) {
    run.train.stage_loss_weights.assign(model.num_stages(), 1.0);
  }
  train_and_save(model, data, run, parent_hash);
  std::cout << "grew " << parent.num_stages() << " -> " << model.num_stages() << " stages; "
            << "checkpoint " << (cfg.out_dir / "model.ckpt").string() << "\n";
  return 0;
}

Tensor bar_chart(const std::vector<LabeledReport>& reports) {
  const int bar = 40, gap = 10, height = 200;
  const int width = static_cast<int>(reports.size()) * (bar + gap) + gap;
  Tensor img(1, 3, height, std::max(width, 1), 1.0);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const double x0 = gap + static_cast<double>(i) * (bar + gap);
    const double top = height - reports[i].second.total * (height - 10);
    const bool fused = reports[i].first == "fused";
    fill_rect(img, x0, top, x0 + bar, height, fused ? Rgb{0.85, 0.3, 0.2} : Rgb{0.2, 0.4, 0.8});
  }
  return img;
}

void write_overlays(const std::vector<PoseSample>& data, const std::vector<PredictionRecord>& preds,
                    const fs::path& dir, int limit) {
  const SkeletonSpec& skel = mpii_skeleton();
  for (int i = 0; i < std::min<int>(limit, static_cast<int>(data.size())); ++i) {
    Tensor img = data[i].image;
    for (auto [a, b] : skel.limbs) {
      draw_segment(img, preds[i].keypoints[a], preds[i].keypoints[b], 1.5, {1.0, 1.0, 1.0});
    }
    for (int j = 0; j < skel.num_joints(); ++j) {
      if (data[i].annotation.visibility[j]) {
        draw_disk(img, data[i].annotation.keypoints[j], 1.5, {0.0, 1.0, 0.0});
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "overlay_%03d.ppm", i);
    write_ppm(img, dir / name);
  }
}

int cmd_eval(const RunConfig& cfg, const Flags& f) {
  echo_config(cfg);
  const SkeletonSpec& skel = mpii_skeleton();
  std::vector<LabeledReport> rows;
  if (!f.predictions.empty()) {
    const fs::path ann = !f.annotations.empty() ? fs::path(f.annotations)
                                               : cfg.data_dir / "annotations.json";
    const auto gts = load_annotations(ann, skel);
    rows.emplace_back("fused", pckh(load_predictions(f.predictions), gts, skel, cfg.eval.alpha));
  } else {
    if (cfg.checkpoint.empty()) throw DomainError("eval needs --checkpoint or --predictions");
    Cascade model = load_checkpoint(cfg.checkpoint);
    const auto data = load_samples(cfg);
    EvalConfig ec = cfg.eval;
    if (ec.fusion_window > model.num_stages()) {
      throw DomainError("fusion window exceeds the model's " + std::to_string(model.num_stages()) +
                        " stages");
    }
    EvalResult r = evaluate(model, data, ec, skel);
    for (std::size_t j = 0; j < r.per_stage.size(); ++j) {
      rows.emplace_back("stage " + std::to_string(j + 1), r.per_stage[j]);
    }
    rows.emplace_back("fused", r.fused);
    save_predictions(r.predictions, cfg.out_dir / "predictions.json");
    if (f.plots) {
      write_overlays(data, r.predictions, cfg.out_dir, 8);
      write_ppm(bar_chart(rows), cfg.out_dir / "pckh_bars.ppm");
    }
  }
  const std::string table = report_table(rows, skel);
  write_text(cfg.out_dir / "report.txt", table);
  write_text(cfg.out_dir / "report.json", report_json(rows));
  std::cout << table;
  return 0;
}

int cmd_predict(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw DomainError("predict needs --checkpoint");
  echo_config(cfg);
  Cascade model = load_checkpoint(cfg.checkpoint);
  const auto data = load_samples(cfg);
  std::vector<Tensor> images;
  std::vector<std::string> ids;
  for (const auto& s : data) {
    images.push_back(s.image);
    ids.push_back(s.annotation.image_id);
  }
  const auto maps = infer_stage_maps(model, images, cfg.eval.use_flip_test, mpii_skeleton());
  save_predictions(predict_from_maps(maps, ids, cfg.eval), cfg.out_dir / "predictions.json");
  std::cout << "wrote " << ids.size() << " predictions to "
            << (cfg.out_dir / "predictions.json").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Cascaded feature-aggregation pose estimation at desk scale", "cfa"};
  app.require_subcommand(1);
  Flags f;
  auto* synth = app.add_subcommand("synth", "Write a synthetic stick-figure dataset");
  auto* trn = app.add_subcommand("train", "Train a cascade from the resolved config");
  auto* grow = app.add_subcommand("grow", "Append a stage to a checkpoint and keep training");
  auto* evl = app.add_subcommand("eval", "Per-stage and fused PCKh table");
  auto* pred = app.add_subcommand("predict", "Write fused predictions");
  for (auto* c : {synth, trn, grow, evl, pred}) add_common(c, f);
  evl->add_option("--predictions", f.predictions, "Score a prediction file instead of a model");
  evl->add_option("--annotations", f.annotations, "Annotation file for --predictions");
  evl->add_flag("--plots", f.plots, "Write skeleton overlays and a PCKh bar chart");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }
  try {
    const RunConfig cfg = resolve(f);
    if (synth->parsed()) return cmd_synth(cfg);
    if (trn->parsed()) return cmd_train(cfg);
    if (grow->parsed()) return cmd_grow(cfg);
    if (evl->parsed()) return cmd_eval(cfg, f);
    if (pred->parsed()) return cmd_predict(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cfa
