// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tdcnet/errors.hpp"

namespace tdcnet::train {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("invalid Adam constants");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},       {"weight_decay", weight_decay}, {"beta1", beta1},   {"beta2", beta2},
          {"adam_eps", adam_eps}, {"batch", batch},       {"epochs", epochs}, {"epochs_aux", epochs_aux},
          {"max_steps", max_steps}, {"augment", augment}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.adam_eps = j.at("adam_eps");
  c.batch = j.at("batch");
  c.epochs = j.at("epochs");
  c.epochs_aux = j.at("epochs_aux");
  c.max_steps = j.at("max_steps");
  c.augment = j.value("augment", false);
  c.seed = j.at("seed");
  return c;
}

void Adam::step(const std::vector<std::pair<std::string, Parameter*>>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, p] : params) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, std::make_pair(Tensor(p->value.shape()), Tensor(p->value.shape()))).first;
    }
    auto& [m, v] = it->second;
    double* w = p->value.ptr();
    const double* g = p->grad.ptr();
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double gi = g[i] + cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps);
    }
  }
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Spatial2d: return "spatial2d";
    case Stage::Temporal3d: return "temporal3d";
    case Stage::Main: return "main";
  }
  return "?";
}

std::vector<Stage> stages_for(model::Arch arch) {
  if (arch == model::Arch::Full) return {Stage::Spatial2d, Stage::Temporal3d, Stage::Main};
  return {Stage::Main};
}

nlohmann::json EpochRecord::to_json() const {
  return {{"stage", stage}, {"epoch", epoch}, {"steps", steps}, {"loss", loss},
          {"l_reg", l_reg}, {"l_obj", l_obj}, {"l_cls", l_cls}};
}

Batch make_batch(const std::vector<data::ClipSample>& clips, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw UsageError("empty batch");
  const Shape s = clips.at(idx[0]).frames.shape();  // [T, 1, H, W]
  const std::int64_t T = s[0], H = s[2], W = s[3];
  Batch b;
  b.clips = Tensor(Shape{static_cast<std::int64_t>(idx.size()), 1, T, H, W});
  double* out = b.clips.ptr();
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto& c = clips.at(idx[n]);
    if (c.frames.shape() != s) throw DimensionError("clips in a batch differ in shape");
    std::copy(c.frames.storage().begin(), c.frames.storage().end(), out + static_cast<std::int64_t>(n) * T * H * W);
    b.boxes.push_back(c.boxes);
  }
  return b;
}

void apply_symmetry(Batch& b, std::size_t n, int code) {
  const Shape s = b.clips.shape();
  const std::int64_t T = s[2], H = s[3], W = s[4];
  const bool fx = code & 1, fy = code & 2, tr = code & 4;
  if (tr && H != W) throw DimensionError("transpose needs square frames");
  if (code == 0) return;
  double* base = b.clips.ptr() + static_cast<std::int64_t>(n) * T * H * W;
  std::vector<double> src(base, base + T * H * W);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        std::int64_t sy = fy ? H - 1 - y : y, sx = fx ? W - 1 - x : x;
        if (tr) std::swap(sy, sx);
        base[(t * H + y) * W + x] = src[static_cast<std::size_t>((t * H + sy) * W + sx)];
      }
  // Boxes live in pixel-index coordinates, so a flip maps x to W - 1 - x.
  for (auto& bx : b.boxes.at(n)) {
    if (tr) {
      std::swap(bx.x, bx.y);
      std::swap(bx.w, bx.h);
    }
    if (fx) bx.x = static_cast<double>(W - 1) - bx.x - bx.w;
    if (fy) bx.y = static_cast<double>(H - 1) - bx.y - bx.h;
  }
}

namespace {

model::Group stage_group(Stage s) {
  switch (s) {
    case Stage::Spatial2d: return model::Group::Backbone2d;
    case Stage::Temporal3d: return model::Group::Backbone3d;
    case Stage::Main: return model::Group::Main;
  }
  return model::Group::Main;
}

Tensor last_frame(const Tensor& clips) {
  const Shape s = clips.shape();
  const std::int64_t N = s[0], T = s[2], HW = s[3] * s[4];
  Tensor out(Shape{N, 1, s[3], s[4]});
  for (std::int64_t n = 0; n < N; ++n)
    std::copy_n(clips.ptr() + (n * T + T - 1) * HW, HW, out.ptr() + n * HW);
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::vector<std::pair<std::string, Parameter*>> stage_parameters(model::TdcNet& net, Stage s) {
  std::vector<std::pair<std::string, Parameter*>> out;
  net.visit_group(stage_group(s), {[&](const std::string& name, Parameter& p) {
                                     if (p.trainable) out.emplace_back(name, &p);
                                   },
                                   [](const std::string&, Tensor&) {}});
  return out;
}

model::LossResult stage_loss(model::TdcNet& net, Stage s, Tape& tape, const Batch& b) {
  const ForwardCtx ctx{BnMode::Train, true};
  std::vector<Var> raw;
  switch (s) {
    case Stage::Spatial2d: raw = net.forward_aux2d(tape.constant(last_frame(b.clips)), ctx); break;
    case Stage::Temporal3d: raw = net.forward_aux3d(tape.constant(b.clips), ctx); break;
    case Stage::Main: raw = net.forward(tape.constant(b.clips), ctx); break;
  }
  return model::detection_loss(raw, b.boxes, net.config().strides());
}

void recalibrate_bn(model::TdcNet& net, Stage s, const std::vector<data::ClipSample>& clips, std::int64_t batch) {
  std::int64_t k = 0;
  for (std::size_t at = 0; at < clips.size(); at += static_cast<std::size_t>(batch), ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(clips.size(), at + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    const Batch b = make_batch(clips, idx);
    const ForwardCtx ctx{BnMode::Train, true, 1.0 / static_cast<double>(k + 1)};
    Tape tape;
    switch (s) {
      case Stage::Spatial2d: net.forward_aux2d(tape.constant(last_frame(b.clips)), ctx); break;
      case Stage::Temporal3d: net.forward_aux3d(tape.constant(b.clips), ctx); break;
      case Stage::Main: net.forward(tape.constant(b.clips), ctx); break;
    }
  }
}

std::vector<EpochRecord> run_stage(model::TdcNet& net, Stage s, const std::vector<data::ClipSample>& clips,
                                   const TrainConfig& cfg, const Hooks& hooks) {
  cfg.validate();
  if (clips.empty()) throw UsageError("no training clips");
  if (!net.has_group(stage_group(s))) throw UsageError(std::string("model has no ") + to_string(s) + " stage");
  const bool full = net.config().arch == model::Arch::Full;
  if (full) {
    net.set_frozen(model::Group::Backbone2d, s == Stage::Main);
    net.set_frozen(model::Group::Backbone3d, s == Stage::Main);
  }
  const auto params = stage_parameters(net, s);
  for (const auto& [name, p] : params) p->zero_grad();
  const std::int64_t epochs = s == Stage::Main || cfg.epochs_aux < 0 ? cfg.epochs : cfg.epochs_aux;
  Adam opt(cfg);
  std::vector<EpochRecord> history;
  std::int64_t step = 0;
  for (std::int64_t e = 0; e < epochs; ++e) {
    std::seed_seq sq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                     static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)};
    Rng rng(sq);
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.stage = static_cast<int>(s);
    rec.epoch = e;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
      if (cfg.max_steps >= 0 && step >= cfg.max_steps) break;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), at + static_cast<std::size_t>(cfg.batch))));
      Batch b = make_batch(clips, idx);
      if (cfg.augment) {
        std::uniform_int_distribution<int> sym(0, b.clips.shape()[3] == b.clips.shape()[4] ? 7 : 3);
        for (std::size_t n = 0; n < idx.size(); ++n) apply_symmetry(b, n, sym(rng));
      }
      Tape tape;
      model::LossResult loss;
      try {
        loss = stage_loss(net, s, tape, b);
      } catch (const NumericError& err) {
        std::ostringstream os;
        os << "stage " << to_string(s) << " epoch " << e << " step " << step << ": " << err.what();
        throw DivergenceError(os.str());
      }
      const auto& lp = loss.parts;
      if (!finite(lp.total)) {
        std::ostringstream os;
        os << "non-finite loss in stage " << to_string(s) << " epoch " << e << " step " << step << " (reg " << lp.l_reg
           << ", obj " << lp.l_obj << ", cls " << lp.l_cls << ")";
        throw DivergenceError(os.str());
      }
      tape.backward(loss.total);
      for (const auto& [name, p] : params) {
        const auto& g = p->grad.storage();
        if (!std::all_of(g.begin(), g.end(), finite)) {
          throw DivergenceError("non-finite gradient for " + name + " in stage " + to_string(s) + " step " +
                                std::to_string(step));
        }
      }
      opt.step(params);
      for (const auto& [name, p] : params) p->zero_grad();
      rec.loss += lp.total;
      rec.l_reg += lp.l_reg;
      rec.l_obj += lp.l_obj;
      rec.l_cls += lp.l_cls;
      ++rec.steps;
      if (hooks.on_step) hooks.on_step({static_cast<int>(s), e, step, lp});
      ++step;
    }
    if (rec.steps > 0) {
      const double n = static_cast<double>(rec.steps);
      rec.loss /= n;
      rec.l_reg /= n;
      rec.l_obj /= n;
      rec.l_cls /= n;
      history.push_back(rec);
    }
  }
  if (step > 0) recalibrate_bn(net, s, clips, cfg.batch);
  if (hooks.on_stage_end) hooks.on_stage_end(s);
  return history;
}

std::vector<EpochRecord> train(model::TdcNet& net, const std::vector<data::ClipSample>& clips, const TrainConfig& cfg,
                               Stage first, const Hooks& hooks) {
  std::vector<EpochRecord> all;
  for (Stage s : stages_for(net.config().arch)) {
    if (static_cast<int>(s) < static_cast<int>(first)) continue;
    auto h = run_stage(net, s, clips, cfg, hooks);
    all.insert(all.end(), h.begin(), h.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json EvalResult::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"P", precision},       {"R", recall},          {"F1", f1},
          {"AP50", num(ap50)},    {"threshold", threshold}, {"ground_truths", ground_truths},
          {"frames", frames.size()}, {"per_sequence", per_sequence}};
}

namespace {

struct Summary {
  double p = 0, r = 0, f1 = 0, ap = 0, thr = 0;
  std::size_t gts = 0;
};

Summary summarize(const std::vector<const FrameResult*>& frames) {
  std::vector<metrics::FrameDetections> fd;
  for (const auto* f : frames) {
    metrics::FrameDetections d;
    for (const auto& det : f->detections) d.detections.push_back({det.box(), det.objectness});
    d.ground_truths = f->ground_truths;
    fd.push_back(std::move(d));
  }
  const metrics::MatchResult m = metrics::match_detections(fd, 0.5);
  const metrics::PRF1 best = metrics::best_f1(m);
  Summary s{best.precision, best.recall, best.f1, std::nan(""), best.threshold, m.total_ground_truths};
  if (m.total_ground_truths > 0) s.ap = metrics::ap50(m);
  return s;
}

}  // namespace

EvalResult score(std::vector<FrameResult> frames) {
  EvalResult r;
  r.frames = std::move(frames);
  std::vector<const FrameResult*> all;
  std::map<std::int64_t, std::vector<const FrameResult*>> by_seq;
  for (const auto& f : r.frames) {
    all.push_back(&f);
    by_seq[f.sequence].push_back(&f);
  }
  const Summary s = summarize(all);
  r.precision = s.p;
  r.recall = s.r;
  r.f1 = s.f1;
  r.ap50 = s.ap;
  r.threshold = s.thr;
  r.ground_truths = s.gts;
  for (const auto& [seq, fs] : by_seq) {
    const Summary q = summarize(fs);
    r.per_sequence[std::to_string(seq)] = {{"P", q.p},
                                           {"R", q.r},
                                           {"F1", q.f1},
                                           {"AP50", std::isfinite(q.ap) ? nlohmann::json(q.ap) : nlohmann::json(nullptr)},
                                           {"frames", fs.size()},
                                           {"ground_truths", q.gts}};
  }
  return r;
}

EvalResult evaluate(model::TdcNet& net, const std::vector<data::ClipSample>& clips, const EvalOptions& opts,
                    const std::function<void(std::size_t, const std::vector<Tensor>&)>& on_features) {
  if (opts.batch < 1) throw UsageError("eval batch must be at least 1");
  std::vector<FrameResult> frames;
  const auto strides = net.config().strides();
  for (std::size_t at = 0; at < clips.size(); at += static_cast<std::size_t>(opts.batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(clips.size(), at + static_cast<std::size_t>(opts.batch)); ++i) idx.push_back(i);
    const Batch b = make_batch(clips, idx);
    Tape tape;
    std::vector<Tensor> feats;
    const auto raw = net.forward(tape.constant(b.clips), ForwardCtx{BnMode::Infer, false},
                                 on_features ? &feats : nullptr);
    if (on_features) on_features(at, feats);
    std::vector<Tensor> rawv;
    for (const auto& v : raw) rawv.push_back(v.value());
    const auto dets = model::decode_predictions(rawv, strides, opts.conf_threshold, opts.nms_iou);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto& c = clips[idx[n]];
      frames.push_back({c.sequence, c.frame, dets[n], c.boxes});
    }
  }
  return score(std::move(frames));
}

}  // namespace tdcnet::train
