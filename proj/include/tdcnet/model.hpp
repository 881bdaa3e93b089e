// SPDX-License-Identifier: Apache-2.0
//
// The toy detector: TDC, 3D and 2D backbones, tri-stream attention, a
// top-down neck and an anchor-free head, plus box encoding, the detection
// loss and prediction decoding.
//
// Head channels per cell: (dx, dy, log w, log h, objectness logit). A cell
// (i, j) at stride s decodes to centre ((j + 0.5 + dx) s, (i + 0.5 + dy) s)
// and extent (s e^lw, s e^lh).
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdcnet/attention.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/nn.hpp"
#include "tdcnet/serialize.hpp"
#include "tdcnet/tdc.hpp"

namespace tdcnet::model {

/// full: TDC + 3D + 2D backbones with TDCSTA. tdcr: TDC backbone only.
/// plain3d: 3D backbone only.
enum class Arch { Full, Tdcr, Plain3d };
Arch arch_from_string(const std::string& s);
const char* to_string(Arch a);

struct ModelConfig {
  Arch arch = Arch::Full;
  std::int64_t frames = 5;
  std::int64_t height = 128, width = 128;
  std::vector<std::int64_t> widths{16, 32, 64, 128};
  std::int64_t kt = 5;     // TDC temporal kernel
  std::int64_t kt_3d = 3;  // plain 3D backbone temporal kernel
  std::int64_t heads = 4;
  std::int64_t window_p = 5, window_m = 8;
  attn::QueryStream query = attn::QueryStream::Tdcf;
  std::int64_t neck_width = 32;

  void validate() const;
  /// Strides of the three exported levels.
  std::vector<std::int64_t> strides() const { return {4, 8, 16}; }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class BackboneKind { Tdc, Conv3d, Conv2d };

/// Stem then four stride-2 stages of {conv block -> pointwise conv -> SiLU};
/// the last three stage outputs are exported (strides 4, 8, 16).
class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneKind kind, const ModelConfig& cfg, Rng& rng);

  /// Input [N, 1, T, H, W] (2D kind: [N, 1, H, W]).
  std::vector<Var> forward(Var x, const ForwardCtx& ctx);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::vector<metrics::LayerDesc> describe(const Shape& input, const std::string& name) const;
  BackboneKind kind() const { return kind_; }
  std::int64_t export_width(std::size_t i) const { return widths_.at(i + 1); }

  /// TDC kind only: first TDCR layer and the stem in front of it.
  tdc::TdcrModule& tdcr(std::size_t stage) { return tdcr_.at(stage); }
  Var stem_forward(Var x);
  std::size_t fuse();
  bool fused() const;

 private:
  BackboneKind kind_ = BackboneKind::Tdc;
  std::vector<std::int64_t> widths_;
  Conv3dLayer stem3d_;
  Conv2dLayer stem2d_;
  std::vector<tdc::TdcrModule> tdcr_;
  std::vector<Conv3dLayer> conv3d_;
  std::vector<Conv2dLayer> conv2d_;
  std::vector<BatchNormLayer> bn_;
  std::vector<Conv3dLayer> point3d_;
  std::vector<Conv2dLayer> point2d_;
};

/// Top-down neck (1x1 laterals, nearest upsample + add, 3x3 smoothing) and a
/// head shared across levels.
class NeckHead {
 public:
  NeckHead() = default;
  NeckHead(const std::vector<std::int64_t>& in_channels, std::int64_t width, Rng& rng);

  /// Three [N, C_l, H_l, W_l] maps, finest first -> raw [N, 5, H_l, W_l] per level.
  std::vector<Var> forward(const std::vector<Var>& feats);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::vector<metrics::LayerDesc> describe(std::int64_t n, const std::vector<Shape>& grids,
                                           const std::string& name) const;
  /// Final 1x1 layer, exposed for tests.
  Conv2dLayer& predictor() { return pred_; }

 private:
  std::vector<std::int64_t> in_;
  std::int64_t width_ = 0;
  std::vector<Conv2dLayer> lateral_, smooth_;
  Conv2dLayer head_, pred_;
};

/// [N, C, T, H, W] -> [N, C, H, W] at temporal index t.
Var select_time(Var x, std::int64_t t);
/// Nearest-neighbour x2 upsampling of [N, C, H, W].
Var upsample2x(Var x);

/// Parameter groups, used by staged training.
enum class Group { Backbone2d, Backbone3d, Main };

class TdcNet {
 public:
  TdcNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  /// Clip [N, 1, T, H, W] -> raw predictions per level.
  std::vector<Var> forward(Var clip, const ForwardCtx& ctx,
                           std::vector<Tensor>* features = nullptr);
  /// Pretraining paths of the full model: 2D backbone on [N, 1, H, W] and
  /// 3D backbone on clips, each with its own auxiliary neck/head.
  std::vector<Var> forward_aux2d(Var frame, const ForwardCtx& ctx);
  std::vector<Var> forward_aux3d(Var clip, const ForwardCtx& ctx);

  void visit(const StateVisitor& v);
  void visit_group(Group g, const StateVisitor& v);
  bool has_group(Group g) const;
  /// A frozen backbone runs with inference BN, off the caller's tape, so its
  /// parameters and statistics stay untouched by training.
  void set_frozen(Group g, bool frozen);
  bool frozen(Group g) const { return frozen_[static_cast<std::size_t>(g)]; }

  /// Inference-path cost sheet at batch n.
  std::vector<metrics::LayerDesc> describe(std::int64_t n = 1) const;
  /// Re-parameterises every TDCR layer; returns how many were fused.
  std::size_t fuse();
  bool fused() const;

  Backbone& tdc_backbone() { return tdc_; }
  NeckHead& neck() { return neck_; }

 private:
  ModelConfig cfg_;
  Backbone tdc_, b3d_, b2d_;
  std::vector<attn::TdcstaStage> sta_;
  NeckHead neck_, aux2d_, aux3d_;
  std::array<bool, 3> frozen_{false, false, false};
};

/// Detection in input-pixel units.
struct Detection {
  double cx = 0, cy = 0, w = 0, h = 0;
  double objectness = 0;
  double class_score = 0;
  std::size_t frame = 0;

  metrics::Box box() const { return {cx - w / 2, cy - h / 2, w, h}; }
};

struct Encoded {
  std::size_t level = 0;
  std::int64_t i = 0, j = 0;  // cell row / column
  double dx = 0, dy = 0, lw = 0, lh = 0;
};

/// Level whose stride is nearest sqrt(w h) in log scale (ties to the finer level).
std::size_t assign_level(const metrics::Box& box, const std::vector<std::int64_t>& strides);
/// Cell containing the box centre at the assigned level, clamped to the grid.
Encoded encode_box(const metrics::Box& box, const std::vector<std::int64_t>& strides,
                   const std::vector<std::pair<std::int64_t, std::int64_t>>& grids);
metrics::Box decode_box(const Encoded& e, const std::vector<std::int64_t>& strides);

struct LossBreakdown {
  double l_reg = 0, l_obj = 0, l_cls = 0, total = 0;
  std::int64_t positives = 0;
};

struct LossResult {
  Var total;
  LossBreakdown parts;
};

/// L_reg = mean over positive cells of (1 - IoU); L_obj = BCE over all cells
/// and L_cls = BCE over positive cells, both divided by max(1, positives).
/// targets[n] are the ground-truth boxes of batch item n. A cell claimed by
/// several boxes keeps the first.
LossResult detection_loss(const std::vector<Var>& raw,
                          const std::vector<std::vector<metrics::Box>>& targets,
                          const std::vector<std::int64_t>& strides);

double sigmoid(double z);

/// Per batch item: cells with sigmoid(obj) >= conf_threshold, decoded and
/// reduced by greedy NMS (a box is dropped when its IoU with a kept box
/// exceeds nms_iou). Sorted by confidence descending.
std::vector<std::vector<Detection>> decode_predictions(const std::vector<Tensor>& raw,
                                                       const std::vector<std::int64_t>& strides,
                                                       double conf_threshold = 0.25,
                                                       double nms_iou = 0.5);
std::vector<Detection> nms(std::vector<Detection> dets, double nms_iou);

/// Checkpoint = tensor archive of every parameter and buffer plus metadata
/// (model config, fused flag, module tree).
void save_checkpoint(const std::filesystem::path& path, TdcNet& net,
                     const nlohmann::json& extra = nlohmann::json::object());
struct LoadedCheckpoint {
  std::unique_ptr<TdcNet> net;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Copies every named tensor from `archive` into `net`; shapes must match.
void load_state(TdcNet& net, const TensorArchive& archive);
TensorArchive state_archive(TdcNet& net);

}  // namespace tdcnet::model
