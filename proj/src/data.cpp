// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "tdcnet/errors.hpp"
#include "tdcnet/nn.hpp"

namespace tdcnet::data {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("scene must be at least 16x16");
  if (frames < 1) throw ConfigError("scene needs at least one frame");
  if (targets < 0 || static_distractors < 0 || clutter_blobs < 0) throw ConfigError("counts must be nonnegative");
  if (size_min < 2.0 || size_max < size_min) throw ConfigError("target sizes must be >= 2 px and ordered");
  if (!(scr_min > 0.0) || scr_max < scr_min) throw ConfigError("SCR range must be positive and ordered");
  if (speed_min < 0.0 || speed_max < speed_min) throw ConfigError("speed range must be nonnegative and ordered");
  if (noise_sigma < 0.0 || velocity_jitter < 0.0 || clutter_drift < 0.0) throw ConfigError("noise levels must be nonnegative");
  if (jitter < 0 || jitter * 8 >= std::min(height, width)) {
    throw ConfigError("camera jitter must be below min(H, W) / 8");
  }
  if (2.0 * jitter + 2.0 * size_max + 2.0 >= static_cast<double>(std::min(height, width))) {
    throw ConfigError("targets of size " + std::to_string(size_max) + " do not fit the frame");
  }
}

nlohmann::json SceneConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"frames", frames},
          {"targets", targets},
          {"size_min", size_min},
          {"size_max", size_max},
          {"scr_min", scr_min},
          {"scr_max", scr_max},
          {"speed_min", speed_min},
          {"speed_max", speed_max},
          {"velocity_jitter", velocity_jitter},
          {"static_distractors", static_distractors},
          {"clutter_blobs", clutter_blobs},
          {"clutter_drift", clutter_drift},
          {"noise_sigma", noise_sigma},
          {"jitter", jitter},
          {"seed", seed}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.height = j.at("height");
  c.width = j.at("width");
  c.frames = j.at("frames");
  c.targets = j.at("targets");
  c.size_min = j.at("size_min");
  c.size_max = j.at("size_max");
  c.scr_min = j.at("scr_min");
  c.scr_max = j.at("scr_max");
  c.speed_min = j.at("speed_min");
  c.speed_max = j.at("speed_max");
  c.velocity_jitter = j.at("velocity_jitter");
  c.static_distractors = j.at("static_distractors");
  c.clutter_blobs = j.at("clutter_blobs");
  c.clutter_drift = j.at("clutter_drift");
  c.noise_sigma = j.at("noise_sigma");
  c.jitter = j.at("jitter");
  c.seed = j.at("seed");
  return c;
}

namespace {

/// Sum of bilinear value-noise octaves around a mid-grey level.
Tensor texture(std::int64_t h, std::int64_t w, Rng& rng) {
  Tensor t(Shape{h, w}, 0.35);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::pair<int, double> octaves[] = {{32, 0.10}, {16, 0.05}, {8, 0.025}, {4, 0.012}};
  for (auto [cell, amp] : octaves) {
    const std::int64_t gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh * gw));
    for (auto& g : grid) g = u(rng);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
        const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
        const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
        auto at = [&](std::int64_t i, std::int64_t j) { return grid[static_cast<std::size_t>(i * gw + j)]; };
        const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                         ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
        t[y * w + x] += amp * v;
      }
  }
  return t;
}

void add_gaussian(Tensor& img, double cy, double cx, double sigma, double amp, double radius) {
  const std::int64_t h = img.dim(0), w = img.dim(1);
  const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cy - radius)));
  const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(cy + radius)));
  const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cx - radius)));
  const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(cx + radius)));
  const double k = -0.5 / (sigma * sigma);
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      img[y * w + x] += amp * std::exp(k * (dx * dx + dy * dy));
    }
}

bool inside_box(const Box& b, double x, double y) {
  return x >= b.x && x <= b.x + b.w && y >= b.y && y <= b.y + b.h;
}

/// Pixels of the 3x neighbourhood of `box` not covered by any box in `exclude`.
std::vector<std::int64_t> neighbourhood(std::int64_t h, std::int64_t w, const Box& box,
                                        const std::vector<Box>& exclude) {
  const double cx = box.x + box.w / 2, cy = box.y + box.h / 2;
  const double hx = 1.5 * box.w, hy = 1.5 * box.h;
  std::vector<std::int64_t> out;
  const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(cy - hy)));
  const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::floor(cy + hy)));
  const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(cx - hx)));
  const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::floor(cx + hx)));
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      if (inside_box(box, fx, fy)) continue;
      if (std::any_of(exclude.begin(), exclude.end(), [&](const Box& b) { return inside_box(b, fx, fy); })) continue;
      out.push_back(y * w + x);
    }
  return out;
}

std::int64_t peak_pixel(std::int64_t h, std::int64_t w, const Box& box) {
  const auto y = std::clamp<std::int64_t>(std::llround(box.y + box.h / 2), 0, h - 1);
  const auto x = std::clamp<std::int64_t>(std::llround(box.x + box.w / 2), 0, w - 1);
  return y * w + x;
}

struct Target {
  double y, x, vy, vx, r, scr;
};

struct Blob {
  double y, x, vy, vx, sigma, amp, omega, phase;
};

bool boxes_close(const Target& a, const Target& b, double pad) {
  return std::abs(a.x - b.x) < a.r + b.r + pad && std::abs(a.y - b.y) < a.r + b.r + pad;
}

}  // namespace

double measure_scr(const Tensor& frame, const Box& box, const std::vector<Box>& exclude) {
  const std::int64_t h = frame.dim(0), w = frame.dim(1);
  const auto nb = neighbourhood(h, w, box, exclude);
  if (nb.size() < 2) throw UsageError("SCR neighbourhood is empty");
  double mean = 0.0;
  for (auto p : nb) mean += frame[p];
  mean /= static_cast<double>(nb.size());
  double var = 0.0;
  for (auto p : nb) var += (frame[p] - mean) * (frame[p] - mean);
  var /= static_cast<double>(nb.size());
  return std::abs(frame[peak_pixel(h, w, box)] - mean) / std::sqrt(var);
}

Sequence generate_sequence(const SceneConfig& cfg, std::int64_t id) {
  cfg.validate();
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id) * 0xBF58476D1CE4E5B9ULL + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const std::int64_t H = cfg.height, W = cfg.width, J = cfg.jitter;
  const std::int64_t CH = H + 2 * J, CW = W + 2 * J;
  Tensor canvas = texture(CH, CW, rng);

  // Static target-like spots, scaled to their local texture contrast.
  for (std::int64_t i = 0; i < cfg.static_distractors; ++i) {
    const double r = uni(cfg.size_min, cfg.size_max);
    const double cy = uni(r, static_cast<double>(CH) - 1 - r), cx = uni(r, static_cast<double>(CW) - 1 - r);
    const Box b{cx - r, cy - r, 2 * r, 2 * r};
    const auto nb = neighbourhood(CH, CW, b, {});
    double mean = 0, var = 0;
    for (auto p : nb) mean += canvas[p];
    mean /= static_cast<double>(nb.size());
    for (auto p : nb) var += (canvas[p] - mean) * (canvas[p] - mean);
    const double sd = std::sqrt(var / static_cast<double>(nb.size())) + cfg.noise_sigma;
    add_gaussian(canvas, cy, cx, r / 2.5, uni(cfg.scr_min, cfg.scr_max) * sd, 3 * r + 2);
  }

  std::vector<Blob> blobs;
  for (std::int64_t i = 0; i < cfg.clutter_blobs; ++i) {
    const double ang = uni(0, 2 * M_PI), sp = uni(0.3, 1.0) * cfg.clutter_drift;
    blobs.push_back({uni(0, static_cast<double>(CH)), uni(0, static_cast<double>(CW)), sp * std::sin(ang),
                     sp * std::cos(ang), uni(5.0, 10.0), uni(0.04, 0.10), uni(0.1, 0.4), uni(0, 2 * M_PI)});
  }

  // Targets move in canvas coordinates; [lo, hi] keeps every box inside the
  // image for any camera offset.
  const auto lo = [&](double r) { return r + 2.0 * static_cast<double>(J) + 0.5; };
  const auto hi = [&](double r, std::int64_t extent) { return static_cast<double>(extent) - 1.0 - r - 0.5; };
  std::vector<Target> targets;
  for (std::int64_t i = 0; i < cfg.targets; ++i) {
    bool placed = false;
    const double r = uni(cfg.size_min, cfg.size_max);
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Target t{uni(lo(r), hi(r, H)), uni(lo(r), hi(r, W)), 0, 0, r, uni(cfg.scr_min, cfg.scr_max)};
      // Measurement neighbourhoods (3x box) must not overlap at the start.
      const bool clash = std::any_of(targets.begin(), targets.end(), [&](const Target& o) {
        return std::abs(o.x - t.x) < 3 * (o.r + t.r) && std::abs(o.y - t.y) < 3 * (o.r + t.r);
      });
      if (clash) continue;
      const double ang = uni(0, 2 * M_PI), sp = uni(cfg.speed_min, cfg.speed_max);
      t.vy = sp * std::sin(ang);
      t.vx = sp * std::cos(ang);
      targets.push_back(t);
      placed = true;
    }
    if (!placed) throw GenerationError("could not place target " + std::to_string(i) + " without overlap");
  }

  Sequence seq;
  seq.id = id;
  Shift cam{static_cast<int>(std::llround(uni(-0.49, 0.49) * 2 * static_cast<double>(J))),
            static_cast<int>(std::llround(uni(-0.49, 0.49) * 2 * static_cast<double>(J)))};
  std::uniform_int_distribution<int> step(-1, 1);
  for (std::int64_t f = 0; f < cfg.frames; ++f) {
    if (f > 0) {
      cam.dy = std::clamp(cam.dy + step(rng), -static_cast<int>(J), static_cast<int>(J));
      cam.dx = std::clamp(cam.dx + step(rng), -static_cast<int>(J), static_cast<int>(J));
      for (auto& t : targets) {
        const Target before = t;
        t.y += t.vy + cfg.velocity_jitter * normal(rng);
        t.x += t.vx + cfg.velocity_jitter * normal(rng);
        if (t.y < lo(t.r)) { t.y = 2 * lo(t.r) - t.y; t.vy = -t.vy; }
        if (t.y > hi(t.r, H)) { t.y = 2 * hi(t.r, H) - t.y; t.vy = -t.vy; }
        if (t.x < lo(t.r)) { t.x = 2 * lo(t.r) - t.x; t.vx = -t.vx; }
        if (t.x > hi(t.r, W)) { t.x = 2 * hi(t.r, W) - t.x; t.vx = -t.vx; }
        const bool bump = std::any_of(targets.begin(), targets.end(), [&](const Target& o) {
          return &o != &t && boxes_close(o, t, 2.0);
        });
        if (bump) {
          t = before;
          t.vy = -t.vy;
          t.vx = -t.vx;
        }
      }
      for (auto& b : blobs) {
        b.y += b.vy;
        b.x += b.vx;
      }
    }
    seq.camera.push_back(cam);
    const double oy = static_cast<double>(J + cam.dy), ox = static_cast<double>(J + cam.dx);

    Tensor frame(Shape{H, W});
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) frame[y * W + x] = canvas[(y + J + cam.dy) * CW + x + J + cam.dx];
    for (const auto& b : blobs) {
      const double amp = b.amp * (1.0 + 0.5 * std::sin(b.omega * static_cast<double>(f) + b.phase));
      add_gaussian(frame, b.y - oy, b.x - ox, b.sigma, amp, 3 * b.sigma);
    }
    if (cfg.noise_sigma > 0) {
      for (auto& v : frame.storage()) v += cfg.noise_sigma * normal(rng);
    }

    // Calibrate amplitudes jointly: each target's measured SCR must equal
    // its drawn value given the others' tails in its neighbourhood.
    std::vector<Box> boxes;
    for (const auto& t : targets) boxes.push_back({t.x - ox - t.r, t.y - oy - t.r, 2 * t.r, 2 * t.r});
    std::vector<Tensor> unit_bumps;
    for (const auto& t : targets) {
      Tensor g(Shape{H, W});
      add_gaussian(g, t.y - oy, t.x - ox, t.r / 2.5, 1.0, 3 * t.r + 2);
      unit_bumps.push_back(std::move(g));
    }
    std::vector<double> amp(targets.size(), 0.0);
    for (int iter = 0; iter < 200; ++iter) {
      double change = 0.0;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto nb = neighbourhood(H, W, boxes[i], boxes);
        const std::int64_t pk = peak_pixel(H, W, boxes[i]);
        auto base = [&](std::int64_t p) {
          double v = frame[p];
          for (std::size_t j = 0; j < targets.size(); ++j)
            if (j != i) v += amp[j] * unit_bumps[j][p];
          return v;
        };
        const Tensor& g = unit_bumps[i];
        double mc = 0, mg = 0;
        for (auto p : nb) {
          mc += base(p);
          mg += g[p];
        }
        const double n = static_cast<double>(nb.size());
        mc /= n;
        mg /= n;
        double vc = 0, vg = 0, cv = 0;
        for (auto p : nb) {
          const double dc = base(p) - mc, dg = g[p] - mg;
          vc += dc * dc;
          vg += dg * dg;
          cv += dc * dg;
        }
        vc /= n;
        vg /= n;
        cv /= n;
        const double s2 = targets[i].scr * targets[i].scr;
        const double delta = base(pk) - mc, a = g[pk] - mg;
        const double qa = a * a - s2 * vg, qb = 2 * (delta * a - s2 * cv), qc = delta * delta - s2 * vc;
        const double disc = qb * qb - 4 * qa * qc;
        if (!(qa > 0) || disc < 0) throw GenerationError("cannot reach the requested SCR for a target");
        const double sq = std::sqrt(disc);
        // The root with delta + A a > 0 puts the peak above the local mean.
        const double r1 = (-qb + sq) / (2 * qa), r2 = (-qb - sq) / (2 * qa);
        const double A = delta + r1 * a > 0 ? r1 : r2;
        change = std::max(change, std::abs(A - amp[i]));
        amp[i] = A;
      }
      if (change <= 1e-15) break;
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Tensor& g = unit_bumps[i];
      for (std::int64_t p = 0; p < frame.numel(); ++p) frame[p] += amp[i] * g[p];
    }
    std::vector<double> scr;
    for (const auto& t : targets) scr.push_back(t.scr);
    seq.frames.push_back(std::move(frame));
    seq.boxes.push_back(std::move(boxes));
    seq.scr.push_back(std::move(scr));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Alignment

Tensor shift_frame(const Tensor& frame, Shift s) {
  const std::int64_t h = frame.dim(0), w = frame.dim(1);
  Tensor out(Shape{h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t sy = std::clamp<std::int64_t>(y + s.dy, 0, h - 1);
    for (std::int64_t x = 0; x < w; ++x) {
      out[y * w + x] = frame[sy * w + std::clamp<std::int64_t>(x + s.dx, 0, w - 1)];
    }
  }
  return out;
}

namespace {

bool is_constant(const Tensor& t) {
  const auto [mn, mx] = std::minmax_element(t.storage().begin(), t.storage().end());
  return *mn == *mx;
}

}  // namespace

AlignResult align_background(const std::vector<Tensor>& frames, int max_shift) {
  if (frames.empty()) throw UsageError("align_background needs at least one frame");
  if (max_shift < 0) throw UsageError("max_shift must be nonnegative");
  const Tensor& ref = frames.back();
  const std::int64_t h = ref.dim(0), w = ref.dim(1);
  if (max_shift >= std::min(h, w)) throw UsageError("max_shift exceeds the frame size");
  AlignResult res;
  const bool ref_flat = is_constant(ref);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Tensor& cur = frames[f];
    if (cur.shape() != ref.shape()) throw DimensionError("frames to align differ in shape");
    Shift best{0, 0};
    bool degenerate = ref_flat || is_constant(cur);
    if (f + 1 == frames.size()) degenerate = degenerate && ref_flat;
    if (!degenerate && f + 1 < frames.size()) {
      double best_ncc = -2.0;
      for (int dy = -max_shift; dy <= max_shift; ++dy)
        for (int dx = -max_shift; dx <= max_shift; ++dx) {
          const std::int64_t y0 = std::max(0, -dy), y1 = std::min<std::int64_t>(h, h - dy);
          const std::int64_t x0 = std::max(0, -dx), x1 = std::min<std::int64_t>(w, w - dx);
          double sr = 0, sf = 0, srr = 0, sff = 0, srf = 0;
          for (std::int64_t y = y0; y < y1; ++y) {
            const double* rr = ref.ptr() + y * w;
            const double* ff = cur.ptr() + (y + dy) * w + dx;
            for (std::int64_t x = x0; x < x1; ++x) {
              sr += rr[x];
              sf += ff[x];
              srr += rr[x] * rr[x];
              sff += ff[x] * ff[x];
              srf += rr[x] * ff[x];
            }
          }
          const double n = static_cast<double>((y1 - y0) * (x1 - x0));
          const double cov = srf - sr * sf / n;
          const double den = std::sqrt(std::max(0.0, srr - sr * sr / n) * std::max(0.0, sff - sf * sf / n));
          const double ncc = den > 0 ? cov / den : -1.0;
          if (ncc > best_ncc) {
            best_ncc = ncc;
            best = {dy, dx};
          }
        }
    }
    res.shifts.push_back(best);
    res.at_boundary.push_back(std::abs(best.dy) == max_shift || std::abs(best.dx) == max_shift);
    res.degenerate.push_back(degenerate);
    res.frames.push_back(shift_frame(cur, best));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Splits and clips

std::pair<std::vector<Segment>, std::vector<Segment>> dataset_split(
    const std::vector<std::shared_ptr<const Sequence>>& sequences, std::int64_t clip_len, double ratio,
    std::uint64_t seed) {
  if (sequences.empty()) throw UsageError("dataset_split needs at least one sequence");
  if (clip_len < 1 || ratio < 0.0 || ratio > 1.0) throw UsageError("invalid segment length or split ratio");
  std::vector<Segment> segs;
  for (const auto& s : sequences) {
    const auto n = static_cast<std::int64_t>(s->frames.size());
    for (std::int64_t start = 0; start + clip_len <= n; start += clip_len) {
      segs.push_back({s, start, clip_len, static_cast<std::int64_t>(segs.size())});
    }
  }
  if (segs.empty()) throw UsageError("no sequence is long enough for one segment");
  Rng rng(seed);
  std::shuffle(segs.begin(), segs.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(segs.size())));
  std::vector<Segment> train(segs.begin(), segs.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Segment> val(segs.begin() + static_cast<std::ptrdiff_t>(n_train), segs.end());
  return {train, val};
}

ClipSample make_clip(const Segment& seg, std::int64_t index, std::int64_t t, int max_shift) {
  if (t < 1) throw UsageError("clip length must be positive");
  if (index < 0 || index >= seg.length) throw UsageError("clip index outside its segment");
  const Sequence& s = *seg.sequence;
  const std::int64_t last = seg.start + index;
  ClipSample c;
  c.sequence = s.id;
  c.frame = last;
  c.boxes = s.boxes[static_cast<std::size_t>(last)];
  std::vector<Tensor> frames;
  for (std::int64_t k = 0; k < t; ++k) {
    const std::int64_t src = std::max(seg.start, last - t + 1 + k);
    c.source_frames.push_back(src);
    frames.push_back(s.frames[static_cast<std::size_t>(src)]);
  }
  if (max_shift >= 0) {
    AlignResult a = align_background(frames, max_shift);
    frames = std::move(a.frames);
    c.shifts = std::move(a.shifts);
  } else {
    c.shifts.assign(static_cast<std::size_t>(t), Shift{});
  }
  const std::int64_t h = frames[0].dim(0), w = frames[0].dim(1);
  c.frames = Tensor(Shape{t, 1, h, w});
  for (std::int64_t k = 0; k < t; ++k) {
    std::copy(frames[static_cast<std::size_t>(k)].storage().begin(), frames[static_cast<std::size_t>(k)].storage().end(),
              c.frames.storage().begin() + k * h * w);
  }
  return c;
}

std::vector<ClipSample> iterate_clips(const std::vector<Segment>& split, std::int64_t t, int max_shift) {
  std::vector<ClipSample> out;
  for (const auto& seg : split)
    for (std::int64_t i = 0; i < seg.length; ++i) out.push_back(make_clip(seg, i, t, max_shift));
  return out;
}

// ---------------------------------------------------------------------------
// PNG and dataset files

Tensor quantize8(const Tensor& frame) {
  Tensor q = frame;
  for (auto& v : q.storage()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return q;
}

void write_png(const fs::path& path, const Tensor& frame, int bit_depth) {
  if (frame.rank() != 2) throw DimensionError("write_png expects [H, W]");
  if (bit_depth != 8 && bit_depth != 16) throw UsageError("PNG bit depth must be 8 or 16");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  const auto h = static_cast<png_uint_32>(frame.dim(0)), w = static_cast<png_uint_32>(frame.dim(1));
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t bpp = bit_depth / 8;
  std::vector<png_byte> row(w * bpp);
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      const auto v = static_cast<unsigned>(std::lround(std::clamp(frame[y * w + x], 0.0, 1.0) * scale));
      if (bpp == 1) {
        row[x] = static_cast<png_byte>(v);
      } else {
        row[2 * x] = static_cast<png_byte>(v >> 8);
        row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor read_png(const fs::path& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path.string() + " is not an 8- or 16-bit grayscale PNG");
  }
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  Tensor out(Shape{static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      out[y * w + x] = depth == 8 ? row[x] / 255.0 : ((row[2 * x] << 8) | row[2 * x + 1]) / 65535.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

namespace {

std::string seq_dir_name(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03lld", static_cast<long long>(id));
  return buf;
}

std::string frame_name(std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.png", static_cast<long long>(n));
  return buf;
}

}  // namespace

DatasetStats write_dataset(const fs::path& root, const std::vector<Sequence>& seqs, const nlohmann::json& manifest) {
  DatasetStats st;
  double size_sum = 0.0;
  fs::create_directories(root);
  for (const auto& s : seqs) {
    const fs::path dir = root / seq_dir_name(s.id);
    fs::create_directories(dir / "frames");
    std::ofstream ann(dir / "annotations.jsonl");
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      write_png(dir / "frames" / frame_name(static_cast<std::int64_t>(f)), s.frames[f]);
      nlohmann::json boxes = nlohmann::json::array();
      for (const auto& b : s.boxes[f]) {
        boxes.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
        size_sum += std::sqrt(b.w * b.h);
        ++st.boxes;
      }
      ann << nlohmann::json{{"frame", f}, {"boxes", boxes}}.dump() << '\n';
      ++st.frames;
    }
    ++st.sequences;
  }
  st.mean_box_size = st.boxes ? size_sum / static_cast<double>(st.boxes) : 0.0;
  nlohmann::json m = manifest;
  m["stats"] = {{"sequences", st.sequences}, {"frames", st.frames}, {"boxes", st.boxes},
                {"mean_box_size", st.mean_box_size}};
  std::ofstream(root / "dataset.json") << m.dump(2) << '\n';
  return st;
}

std::vector<std::shared_ptr<const Sequence>> read_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw UsageError("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("seq_", 0) == 0) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw UsageError("no seq_* directories under " + root.string());
  std::vector<std::shared_ptr<const Sequence>> out;
  for (const auto& dir : dirs) {
    auto s = std::make_shared<Sequence>();
    s->id = std::stoll(dir.filename().string().substr(4));
    std::ifstream ann(dir / "annotations.jsonl");
    if (!ann) throw UsageError("missing " + (dir / "annotations.jsonl").string());
    std::string line;
    while (std::getline(ann, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const std::int64_t f = j.at("frame");
      if (f != static_cast<std::int64_t>(s->frames.size())) throw UsageError("annotation frames out of order in " + dir.string());
      std::vector<Box> boxes;
      for (const auto& b : j.at("boxes")) boxes.push_back({b.at("x"), b.at("y"), b.at("w"), b.at("h")});
      s->frames.push_back(read_png(dir / "frames" / frame_name(f)));
      s->boxes.push_back(std::move(boxes));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tdcnet::data
