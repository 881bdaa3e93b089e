// SPDX-License-Identifier: Apache-2.0
//
// Detection scoring (IoU, greedy matching, P/R/F1, AP50) and analytic
// parameter / multiply-add counting.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdcnet/tensor.hpp"

namespace tdcnet::metrics {

/// Axis-aligned box in pixel units: top-left corner plus extent.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

/// IoU of two boxes; 0 when either has zero area.
double iou(const Box& a, const Box& b);

struct ScoredBox {
  Box box;
  double confidence = 0;
};

/// Detections and ground truths of one frame.
struct FrameDetections {
  std::vector<ScoredBox> detections;
  std::vector<Box> ground_truths;
};

struct MatchedDetection {
  double confidence = 0;
  bool true_positive = false;
  std::size_t frame = 0;
  std::size_t det_index = 0;
  long gt_index = -1;  // -1 for false positives
};

struct MatchResult {
  /// Sorted by confidence descending, ties kept in (frame, insertion) order.
  std::vector<MatchedDetection> detections;
  std::size_t total_ground_truths = 0;
  std::size_t false_negatives = 0;  // ground truths left unmatched
  /// assignment[frame][gt] = detection index in that frame or -1.
  std::vector<std::vector<long>> assignment;
};

/// Greedy confidence-ordered matching per frame: each detection takes the
/// unmatched ground truth of highest IoU >= threshold (ties to lowest index).
MatchResult match_detections(const std::vector<FrameDetections>& frames, double iou_threshold = 0.5);

struct PRF1 {
  double precision = 0, recall = 0, f1 = 0;
  double threshold = 0;
};

/// Counts detections with confidence >= conf_threshold. Precision is 0 when
/// nothing is kept.
PRF1 prf1(const MatchResult& match, double conf_threshold);

/// Operating point that maximises F1 over all distinct confidence levels.
PRF1 best_f1(const MatchResult& match);

/// All-point interpolated average precision. Throws UsageError with zero
/// ground truths.
double ap50(const MatchResult& match);

/// One layer, described for analytic counting at a concrete input shape.
struct LayerDesc {
  std::string type;  // conv3d, conv2d, batch_norm, linear, layer_norm, attention, add, tdcr_branched
  std::string name;
  Shape input;       // full input shape including batch
  Shape weight;      // conv / linear weight shape
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::string temporal_mode = "causal_replicate";
  bool bias = false;             // conv / linear bias, layer_norm shift
  std::int64_t tokens = 0;      // attention: tokens per window
  std::int64_t windows = 0;     // attention: window count (batch included)
  std::int64_t dim = 0;         // attention / norm feature dim
  std::int64_t heads = 0;
  std::int64_t table_rows = 0;  // attention relative-bias rows
  std::int64_t base_params = 0; // tdcr_branched: learnable base weight elements
  std::int64_t kt = 0;          // tdcr_branched: temporal kernel
  bool shared = false;          // weights already counted by another entry
};

struct Cost {
  std::int64_t params = 0;
  std::int64_t flops = 0;  // multiply-adds
};

/// Throws UsageError on an unknown layer type.
Cost count_params_flops(const LayerDesc& layer);
Cost count_params_flops(const std::vector<LayerDesc>& layers);

}  // namespace tdcnet::metrics
