// SPDX-License-Identifier: Apache-2.0
//
// Staged training and validation scoring.
//
// Full model: stage 1 trains the 2D backbone with its auxiliary head on
// single frames, stage 2 the 3D backbone with its auxiliary head on clips,
// stage 3 freezes both and trains the TDC backbone, TDCSTA and the main
// neck/head. The tdcr and plain3d variants have a single stage.
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdcnet/data.hpp"
#include "tdcnet/model.hpp"

namespace tdcnet::train {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;  // L2 term added to the gradient
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::int64_t batch = 4;
  std::int64_t epochs = 30;      // main stage
  std::int64_t epochs_aux = -1;  // stages 1 and 2; < 0 means `epochs`
  std::int64_t max_steps = -1;   // per stage cap, < 0 for none
  bool augment = false;          // random flips / transpose of training clips
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Adam on a named parameter set; moments are keyed by parameter name.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(const std::vector<std::pair<std::string, Parameter*>>& params);
  std::int64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

/// One optimisation unit of a stage.
enum class Stage { Spatial2d = 1, Temporal3d = 2, Main = 3 };
const char* to_string(Stage s);
/// Stages the architecture runs, in order.
std::vector<Stage> stages_for(model::Arch arch);

struct StepRecord {
  int stage = 0;
  std::int64_t epoch = 0, step = 0;
  model::LossBreakdown loss;
};

struct EpochRecord {
  int stage = 0;
  std::int64_t epoch = 0, steps = 0;
  double loss = 0, l_reg = 0, l_obj = 0, l_cls = 0;
  nlohmann::json to_json() const;
};

/// Thrown when a loss or gradient turns non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Batch {
  Tensor clips;  // [N, 1, T, H, W]
  std::vector<std::vector<metrics::Box>> boxes;
};
Batch make_batch(const std::vector<data::ClipSample>& clips, const std::vector<std::size_t>& idx);
/// Applies one of the eight flip / transpose symmetries to clip n and its
/// boxes: bit 0 flips x, bit 1 flips y, bit 2 transposes (square frames only).
void apply_symmetry(Batch& b, std::size_t n, int code);

/// Parameters a stage optimises, with their names.
std::vector<std::pair<std::string, Parameter*>> stage_parameters(model::TdcNet& net, Stage s);

/// Forward + loss of one batch for a stage (frozen groups set by the caller).
model::LossResult stage_loss(model::TdcNet& net, Stage s, Tape& tape, const Batch& b);

/// Re-estimates the running BN statistics of the stage's layers as the plain
/// average over one ordered pass of `clips` with the current weights.
void recalibrate_bn(model::TdcNet& net, Stage s, const std::vector<data::ClipSample>& clips, std::int64_t batch);

struct Hooks {
  /// Called after every optimiser step.
  std::function<void(const StepRecord&)> on_step;
  /// Called when a stage finishes, before the next one starts.
  std::function<void(Stage)> on_stage_end;
};

/// Runs one stage over `clips`, then recalibrates its BN statistics. The
/// shuffle order depends only on (cfg.seed, stage, epoch). Throws
/// DivergenceError on a non-finite loss.
std::vector<EpochRecord> run_stage(model::TdcNet& net, Stage s, const std::vector<data::ClipSample>& clips,
                                   const TrainConfig& cfg, const Hooks& hooks = {});

/// Runs every stage from `first` onwards.
std::vector<EpochRecord> train(model::TdcNet& net, const std::vector<data::ClipSample>& clips,
                               const TrainConfig& cfg, Stage first = Stage::Spatial2d,
                               const Hooks& hooks = {});

struct EvalOptions {
  double conf_threshold = 0.01;  // detections kept for AP; P/R/F1 use the best-F1 point
  double nms_iou = 0.5;
  std::int64_t batch = 4;
};

struct FrameResult {
  std::int64_t sequence = 0, frame = 0;
  std::vector<model::Detection> detections;
  std::vector<metrics::Box> ground_truths;
};

struct EvalResult {
  double precision = 0, recall = 0, f1 = 0, ap50 = 0, threshold = 0;
  std::size_t ground_truths = 0;
  std::vector<FrameResult> frames;
  nlohmann::json per_sequence = nlohmann::json::object();
  nlohmann::json to_json() const;  // summary and per-sequence, without frames
};

/// Scores a list of frames (detections already decoded).
EvalResult score(std::vector<FrameResult> frames);

/// Runs the model in inference mode over `clips` and scores it.
EvalResult evaluate(model::TdcNet& net, const std::vector<data::ClipSample>& clips, const EvalOptions& opts = {},
                    const std::function<void(std::size_t, const std::vector<Tensor>&)>& on_features = {});

}  // namespace tdcnet::train
