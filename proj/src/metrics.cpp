// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "tdcnet/kernels.hpp"

namespace tdcnet::metrics {

double iou(const Box& a, const Box& b) {
  if (a.w < 0 || a.h < 0 || b.w < 0 || b.h < 0) throw UsageError("iou: negative box extent");
  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  return inter / (area_a + area_b - inter);
}

MatchResult match_detections(const std::vector<FrameDetections>& frames, double iou_threshold) {
  MatchResult res;
  res.assignment.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    res.total_ground_truths += fr.ground_truths.size();
    auto& assign = res.assignment[f];
    assign.assign(fr.ground_truths.size(), -1);
    std::vector<std::size_t> order(fr.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return fr.detections[a].confidence > fr.detections[b].confidence;
    });
    for (std::size_t d : order) {
      long best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < fr.ground_truths.size(); ++g) {
        if (assign[g] >= 0) continue;
        const double v = iou(fr.detections[d].box, fr.ground_truths[g]);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<long>(g);
        }
      }
      if (best >= 0) assign[static_cast<std::size_t>(best)] = static_cast<long>(d);
      res.detections.push_back({fr.detections[d].confidence, best >= 0, f, d, best});
    }
  }
  std::stable_sort(res.detections.begin(), res.detections.end(),
                   [](const MatchedDetection& a, const MatchedDetection& b) {
                     return a.confidence > b.confidence;
                   });
  std::size_t tp = 0;
  for (const auto& d : res.detections) tp += d.true_positive ? 1 : 0;
  res.false_negatives = res.total_ground_truths - tp;
  return res;
}

PRF1 prf1(const MatchResult& match, double conf_threshold) {
  std::size_t kept = 0, tp = 0;
  for (const auto& d : match.detections) {
    if (d.confidence < conf_threshold) continue;
    ++kept;
    tp += d.true_positive ? 1 : 0;
  }
  PRF1 r;
  r.threshold = conf_threshold;
  r.precision = kept ? static_cast<double>(tp) / static_cast<double>(kept) : 0.0;
  r.recall = match.total_ground_truths
                 ? static_cast<double>(tp) / static_cast<double>(match.total_ground_truths)
                 : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

PRF1 best_f1(const MatchResult& match) {
  PRF1 best = prf1(match, 1.0 + 1e-12);
  double last = -1.0;
  for (const auto& d : match.detections) {
    if (d.confidence == last) continue;
    last = d.confidence;
    const PRF1 cur = prf1(match, d.confidence);
    if (cur.f1 > best.f1) best = cur;
  }
  return best;
}

double ap50(const MatchResult& match) {
  if (match.total_ground_truths == 0) throw UsageError("AP is undefined without ground truths");
  const auto n = match.detections.size();
  std::vector<double> precision(n), recall(n);
  double tp = 0, fp = 0;
  const double total = static_cast<double>(match.total_ground_truths);
  for (std::size_t i = 0; i < n; ++i) {
    if (match.detections[i].true_positive) tp += 1; else fp += 1;
    precision[i] = tp / (tp + fp);
    recall[i] = tp / total;
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

namespace {

Cost conv_cost(const Shape& input5, const Shape& weight5, std::int64_t stride, std::int64_t pad,
               TemporalMode mode, bool bias) {
  const auto g = Conv3dGeometry::make(input5, weight5, stride, pad, mode);
  const std::int64_t outputs = g.n * g.c_out * g.t_out * g.h_out * g.w_out;
  Cost c;
  c.params = shape_numel(weight5) + (bias ? g.c_out : 0);
  c.flops = outputs * g.c_in * g.kt * g.kh * g.kw + (bias ? outputs : 0);
  return c;
}

}  // namespace

namespace {

Cost layer_cost(const LayerDesc& l) {
  if (l.type == "conv3d") {
    return conv_cost(l.input, l.weight, l.stride, l.pad, temporal_mode_from_string(l.temporal_mode), l.bias);
  }
  if (l.type == "conv2d") {
    if (l.input.size() != 4 || l.weight.size() != 4) throw DimensionError("conv2d cost needs 4D shapes");
    return conv_cost({l.input[0], l.input[1], 1, l.input[2], l.input[3]},
                     {l.weight[0], l.weight[1], 1, l.weight[2], l.weight[3]}, l.stride, l.pad,
                     TemporalMode::Valid, l.bias);
  }
  if (l.type == "batch_norm") {
    return {2 * l.input.at(1), shape_numel(l.input)};
  }
  if (l.type == "linear") {
    const std::int64_t rows = shape_numel(l.input) / l.weight.at(1);
    const std::int64_t b = l.bias ? l.weight.at(0) : 0;
    return {shape_numel(l.weight) + b, rows * shape_numel(l.weight) + rows * b};
  }
  if (l.type == "layer_norm") {
    return {(l.bias ? 2 : 1) * l.dim, 2 * shape_numel(l.input)};
  }
  if (l.type == "attention") {
    const std::int64_t scores = l.windows * l.heads * l.tokens * l.tokens;
    return {l.table_rows * l.heads, 2 * l.windows * l.tokens * l.tokens * l.dim + scores};
  }
  if (l.type == "add") {
    return {0, shape_numel(l.input)};
  }
  if (l.type == "tdcr_branched") {
    const Cost conv = conv_cost(l.input, l.weight, l.stride, l.pad,
                                temporal_mode_from_string(l.temporal_mode), false);
    const auto g = Conv3dGeometry::make(l.input, l.weight, l.stride, l.pad,
                                        temporal_mode_from_string(l.temporal_mode));
    const std::int64_t outputs = g.n * g.c_out * g.t_out * g.h_out * g.w_out;
    return {l.base_params + 3 * 2 * g.c_out, 3 * conv.flops + 3 * outputs + 2 * outputs};
  }
  throw UsageError("count_params_flops: unknown layer type '" + l.type + "'");
}

}  // namespace

Cost count_params_flops(const LayerDesc& l) {
  Cost c = layer_cost(l);
  if (l.shared) c.params = 0;
  return c;
}

Cost count_params_flops(const std::vector<LayerDesc>& layers) {
  Cost total;
  for (const auto& l : layers) {
    const Cost c = count_params_flops(l);
    total.params += c.params;
    total.flops += c.flops;
  }
  return total;
}

}  // namespace tdcnet::metrics
