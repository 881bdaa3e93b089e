// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "tdcnet/errors.hpp"
#include "tdcnet/metrics.hpp"

using namespace tdcnet::metrics;

namespace {

FrameDetections frame(std::vector<ScoredBox> dets, std::vector<Box> gts) {
  return FrameDetections{std::move(dets), std::move(gts)};
}

// Area under the step precision envelope, enumerated point by point.
double envelope_ap(const std::vector<bool>& tp_in_conf_order, std::size_t total_gt) {
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_in_conf_order.size(); ++i) {
    tp += tp_in_conf_order[i];
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    double best = 0;
    for (std::size_t j = i; j < prec.size(); ++j) best = std::max(best, prec[j]);
    ap += (rec[i] - prev_r) * best;
    prev_r = rec[i];
  }
  return ap;
}

}  // namespace

TEST_CASE("iou closed forms") {
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 2, 2}, {5, 5, 2, 2}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou({0, 0, 0, 2}, {0, 0, 2, 2}) == 0.0);
  CHECK_THROWS_AS(iou({0, 0, -1, 2}, {0, 0, 2, 2}), tdcnet::UsageError);
}

TEST_CASE("matching: single detection, duplicate detection") {
  auto m = match_detections({frame({{{0, 0, 4, 4}, 0.9}}, {{0, 0, 4, 4}})});
  CHECK(m.detections.size() == 1);
  CHECK(m.detections[0].true_positive);
  CHECK(m.false_negatives == 0);
  auto d = match_detections({frame({{{0, 0, 4, 4}, 0.8}, {{0, 0, 4, 4}, 0.9}}, {{0, 0, 4, 4}})});
  REQUIRE(d.detections.size() == 2);
  CHECK(d.detections[0].confidence == 0.9);
  CHECK(d.detections[0].true_positive);
  CHECK_FALSE(d.detections[1].true_positive);
  CHECK(d.assignment[0][0] == 1);
}

TEST_CASE("matching agrees with brute-force greedy enumeration") {
  // Three detections competing for two ground truths; the crafted IoUs make
  // the globally best assignment differ from the greedy one.
  const std::vector<Box> gts{{0, 0, 10, 10}, {6, 0, 10, 10}};
  const std::vector<ScoredBox> dets{{{3, 0, 10, 10}, 0.9}, {{0, 0, 10, 10}, 0.8}, {{7, 0, 10, 10}, 0.7}};
  auto m = match_detections({frame(dets, gts)});

  // Oracle: enumerate every labelling of detections to gts (or none), keep
  // those consistent with the greedy rule taken in confidence order.
  std::vector<int> best_assign;
  std::vector<int> assign(3, -1);
  std::function<void(int)> rec = [&](int k) {
    if (k == 3) {
      std::vector<bool> used(2, false);
      for (int i = 0; i < 3; ++i) {
        int want = -1;
        double wi = 0.5;
        for (int g = 0; g < 2; ++g) {
          const double v = iou(dets[static_cast<std::size_t>(i)].box, gts[static_cast<std::size_t>(g)]);
          if (!used[static_cast<std::size_t>(g)] && v >= wi && (want < 0 || v > wi)) {
            want = g;
            wi = v;
          }
        }
        if (assign[static_cast<std::size_t>(i)] != want) return;
        if (want >= 0) used[static_cast<std::size_t>(want)] = true;
      }
      best_assign = assign;
      return;
    }
    for (int g = -1; g < 2; ++g) {
      assign[static_cast<std::size_t>(k)] = g;
      rec(k + 1);
    }
  };
  rec(0);
  REQUIRE(best_assign.size() == 3);
  for (const auto& md : m.detections) CHECK(md.gt_index == best_assign[md.det_index]);
  CHECK(m.false_negatives == 0);
}

TEST_CASE("prf1 closed forms") {
  auto perfect = match_detections({frame({{{0, 0, 4, 4}, 0.9}}, {{0, 0, 4, 4}})});
  auto p = prf1(perfect, 0.5);
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);
  CHECK(p.f1 == 1.0);
  auto empty = prf1(match_detections({frame({}, {{0, 0, 4, 4}})}), 0.5);
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  auto half = prf1(match_detections({frame({{{0, 0, 4, 4}, 0.9}, {{20, 20, 4, 4}, 0.8}}, {{0, 0, 4, 4}})}), 0.5);
  CHECK(half.precision == 0.5);
  CHECK(half.recall == 1.0);
  CHECK(half.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("ap50 hand cases") {
  auto all_first = match_detections({frame({{{0, 0, 4, 4}, 0.9}, {{10, 10, 4, 4}, 0.8}, {{30, 30, 4, 4}, 0.2}},
                                           {{0, 0, 4, 4}, {10, 10, 4, 4}})});
  CHECK(ap50(all_first) == 1.0);
  auto fp_first = match_detections({frame({{{20, 20, 4, 4}, 0.9}, {{0, 0, 4, 4}, 0.8}}, {{0, 0, 4, 4}})});
  CHECK(ap50(fp_first) == 0.5);
  auto tp_first = match_detections({frame({{{0, 0, 4, 4}, 0.9}, {{20, 20, 4, 4}, 0.8}}, {{0, 0, 4, 4}})});
  CHECK(ap50(tp_first) == 1.0);
  CHECK_THROWS_AS(ap50(match_detections({frame({{{0, 0, 4, 4}, 0.9}}, {})})), tdcnet::UsageError);
}

TEST_CASE("ap50 matches enumerated envelope and is invariant under monotone rescaling") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> nd(0, 6), ng(0, 3);
  int sets = 0;
  while (sets < 20) {
    std::vector<FrameDetections> frames;
    std::size_t gts = 0;
    for (int f = 0; f < 4; ++f) {
      FrameDetections fr;
      const int g = ng(rng);
      for (int i = 0; i < g; ++i) fr.ground_truths.push_back({20.0 * i, 0, 6, 6});
      gts += static_cast<std::size_t>(g);
      const int d = nd(rng);
      for (int i = 0; i < d; ++i) {
        fr.detections.push_back({{20.0 * (i % 4) + (u(rng) < 0.5 ? 0 : 3), u(rng) < 0.8 ? 0.0 : 8.0, 6, 6}, u(rng)});
      }
      frames.push_back(fr);
    }
    if (gts == 0) continue;
    ++sets;
    auto m = match_detections(frames);
    std::vector<bool> labels;
    for (const auto& d : m.detections) labels.push_back(d.true_positive);
    const double ap = ap50(m);
    CHECK(ap == doctest::Approx(envelope_ap(labels, m.total_ground_truths)).epsilon(1e-12));
    auto rescaled = frames;
    for (auto& fr : rescaled)
      for (auto& d : fr.detections) d.confidence = std::exp(3.0 * d.confidence) - 7.0;
    CHECK(ap50(match_detections(rescaled)) == ap);

    // Recall is non-increasing in the confidence threshold; P, R stay in [0, 1].
    double prev_r = 2.0;
    for (double thr = 0.0; thr <= 1.0; thr += 0.05) {
      const auto p = prf1(m, thr);
      CHECK(p.recall <= prev_r);
      CHECK(p.precision >= 0.0);
      CHECK(p.precision <= 1.0);
      prev_r = p.recall;
    }
    const auto best = best_f1(m);
    for (double thr = 0.0; thr <= 1.0; thr += 0.05) CHECK(prf1(m, thr).f1 <= best.f1 + 1e-15);
  }
}

TEST_CASE("true positives plus false negatives equal ground truths") {
  auto m = match_detections({frame({{{0, 0, 4, 4}, 0.9}, {{0, 0, 4, 4}, 0.5}}, {{0, 0, 4, 4}, {8, 8, 4, 4}}),
                             frame({}, {{1, 1, 3, 3}})});
  std::size_t tp = 0;
  for (const auto& d : m.detections) tp += d.true_positive;
  CHECK(tp + m.false_negatives == m.total_ground_truths);
  CHECK(m.total_ground_truths == 3);
}

TEST_CASE("layer cost formulas") {
  LayerDesc conv;
  conv.type = "conv2d";
  conv.input = {1, 1, 8, 8};
  conv.weight = {1, 1, 3, 3};
  conv.pad = 1;
  CHECK(count_params_flops(conv).flops == 576);
  CHECK(count_params_flops(conv).params == 9);

  LayerDesc fused;
  fused.type = "conv3d";
  fused.input = {1, 8, 5, 16, 16};
  fused.weight = {8, 8, 5, 3, 3};
  fused.pad = 1;
  fused.bias = true;
  CHECK(count_params_flops(fused).params == 2888);

  LayerDesc bogus;
  bogus.type = "pooling";
  CHECK_THROWS_AS(count_params_flops(bogus), tdcnet::UsageError);
}
