// SPDX-License-Identifier: Apache-2.0
//
// Synthetic moving-small-target sequences, background alignment, segment
// splits, clip iteration and the on-disk PNG + JSONL layout:
//
//   <root>/dataset.json                    scene config and statistics
//   <root>/seq_<id>/frames/<%06d>.png      8-bit grayscale frames
//   <root>/seq_<id>/annotations.jsonl      {"frame": n, "boxes": [{"x","y","w","h"}]}
//
// Boxes are top-left corner plus extent in pixels; pixel (i, j) has its
// centre at (x = j, y = i).
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdcnet/metrics.hpp"
#include "tdcnet/tensor.hpp"

namespace tdcnet::data {

using metrics::Box;

struct SceneConfig {
  std::int64_t height = 128, width = 128;
  std::int64_t frames = 200;
  std::int64_t targets = 2;
  /// Target half-extent in pixels; the Gaussian has sigma = size / 2.5, so
  /// the annotated box (2.5 sigma each side) is 2 * size wide.
  double size_min = 3.0, size_max = 9.0;
  double scr_min = 3.0, scr_max = 6.0;
  double speed_min = 0.5, speed_max = 1.5;  // pixels per frame
  double velocity_jitter = 0.1;             // per-frame velocity noise sigma
  std::int64_t static_distractors = 6;      // target-like static spots
  std::int64_t clutter_blobs = 3;           // drifting, flickering diffuse blobs
  double clutter_drift = 0.6;
  double noise_sigma = 0.01;
  std::int64_t jitter = 2;                  // camera jitter amplitude (integer pixels)
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

struct Shift {
  int dy = 0, dx = 0;
};

struct Sequence {
  std::int64_t id = 0;
  std::vector<Tensor> frames;                // each [H, W]
  std::vector<std::vector<Box>> boxes;       // per frame
  std::vector<std::vector<double>> scr;      // calibrated SCR per box
  std::vector<Shift> camera;                 // per-frame camera offset
};

/// Deterministic per (cfg, id). Throws GenerationError when targets cannot
/// be placed without overlap in 100 tries.
Sequence generate_sequence(const SceneConfig& cfg, std::int64_t id = 0);

/// Signal-to-clutter ratio of a box in a frame: |peak - mean| / std, with the
/// peak at the pixel nearest the box centre and statistics over the 3x box
/// neighbourhood minus every box in `exclude`.
double measure_scr(const Tensor& frame, const Box& box, const std::vector<Box>& exclude);

struct AlignResult {
  std::vector<Tensor> frames;  // aligned, each [H, W]
  std::vector<Shift> shifts;   // aligned(y, x) = frame(y + dy, x + dx)
  std::vector<bool> at_boundary;
  std::vector<bool> degenerate;
};

/// Exhaustive integer-translation normalised cross-correlation of every
/// frame against the last one over [-max_shift, max_shift]^2; borders are
/// filled by replication. A constant frame keeps shift (0, 0), flagged.
AlignResult align_background(const std::vector<Tensor>& frames, int max_shift);
/// Applies a shift with replicated borders.
Tensor shift_frame(const Tensor& frame, Shift s);

struct Segment {
  std::shared_ptr<const Sequence> sequence;
  std::int64_t start = 0, length = 0;
  std::int64_t id = 0;  // unique across the split input
};

/// Cuts every sequence into segments of clip_len frames (short tails
/// dropped), shuffles them with `seed` and splits by `ratio`.
std::pair<std::vector<Segment>, std::vector<Segment>> dataset_split(
    const std::vector<std::shared_ptr<const Sequence>>& sequences, std::int64_t clip_len = 50,
    double ratio = 0.8, std::uint64_t seed = 0);

struct ClipSample {
  Tensor frames;            // [T, 1, H, W], aligned to the last frame
  std::vector<Box> boxes;   // of the last frame
  std::int64_t sequence = 0;
  std::int64_t frame = 0;   // index of the last frame in its sequence
  std::vector<std::int64_t> source_frames;
  std::vector<Shift> shifts;
};

/// One clip per segment frame; history before the segment start replicates
/// its first frame. max_shift < 0 skips alignment.
std::vector<ClipSample> iterate_clips(const std::vector<Segment>& split, std::int64_t t,
                                      int max_shift = -1);
ClipSample make_clip(const Segment& seg, std::int64_t index, std::int64_t t, int max_shift);

// --- disk layout ---

void write_png(const std::filesystem::path& path, const Tensor& frame, int bit_depth = 8);
/// Accepts 8- and 16-bit grayscale; values scaled to [0, 1].
Tensor read_png(const std::filesystem::path& path);

struct DatasetStats {
  std::int64_t sequences = 0, frames = 0, boxes = 0;
  double mean_box_size = 0.0;
};

/// Writes every sequence plus dataset.json; returns what was written.
DatasetStats write_dataset(const std::filesystem::path& root, const std::vector<Sequence>& seqs,
                           const nlohmann::json& manifest);
std::vector<std::shared_ptr<const Sequence>> read_dataset(const std::filesystem::path& root);

/// Frames quantised the way write_png stores them.
Tensor quantize8(const Tensor& frame);

}  // namespace tdcnet::data
