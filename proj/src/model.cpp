// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace tdcnet::model {

Arch arch_from_string(const std::string& s) {
  if (s == "full") return Arch::Full;
  if (s == "tdcr") return Arch::Tdcr;
  if (s == "plain3d") return Arch::Plain3d;
  throw ConfigError("unknown architecture '" + s + "' (expected full, tdcr or plain3d)");
}

const char* to_string(Arch a) {
  switch (a) {
    case Arch::Full: return "full";
    case Arch::Tdcr: return "tdcr";
    case Arch::Plain3d: return "plain3d";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (widths.size() != 4) throw ConfigError("backbone needs exactly 4 stage widths");
  for (auto w : widths)
    if (w < 1) throw ConfigError("stage widths must be positive");
  if (frames < 1) throw ConfigError("frame count must be positive");
  if (height % 16 != 0 || width % 16 != 0 || height < 16 || width < 16) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 16");
  }
  tdc::check_temporal_kernel(kt);
  if (kt_3d < 1 || kt_3d % 2 == 0) throw ConfigError("3D backbone temporal kernel must be odd");
  if (heads < 1) throw ConfigError("head count must be positive");
  if (arch == Arch::Full) {
    for (std::size_t i = 1; i < 4; ++i) {
      if (widths[i] % heads != 0) {
        throw ConfigError("stage width " + std::to_string(widths[i]) + " is not divisible by " +
                          std::to_string(heads) + " heads");
      }
    }
  }
  if (window_p < 1 || window_m < 1) throw ConfigError("window sizes must be positive");
  if (neck_width < 1) throw ConfigError("neck width must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"arch", to_string(arch)},   {"frames", frames},     {"height", height},
          {"width", width},            {"widths", widths},     {"kt", kt},
          {"kt_3d", kt_3d},            {"heads", heads},       {"window_p", window_p},
          {"window_m", window_m},      {"query", attn::to_string(query)},
          {"neck_width", neck_width}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.frames = j.at("frames");
  c.height = j.at("height");
  c.width = j.at("width");
  c.widths = j.at("widths").get<std::vector<std::int64_t>>();
  c.kt = j.at("kt");
  c.kt_3d = j.at("kt_3d");
  c.heads = j.at("heads");
  c.window_p = j.at("window_p");
  c.window_m = j.at("window_m");
  c.query = attn::query_stream_from_string(j.at("query").get<std::string>());
  c.neck_width = j.at("neck_width");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Index helpers

Var select_time(Var x, std::int64_t t) {
  const Shape s = x.shape();
  if (s.size() != 5) throw DimensionError("select_time expects [N, C, T, H, W]");
  if (t < 0 || t >= s[2]) throw DimensionError("select_time index out of range");
  const std::int64_t plane = s[3] * s[4];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(s[0] * s[1] * plane));
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::int64_t p = 0; p < plane; ++p) (*idx)[o++] = (nc * s[2] + t) * plane + p;
  return ag::gather(x, idx, {s[0], s[1], s[3], s[4]});
}

Var upsample2x(Var x) {
  const Shape s = x.shape();
  if (s.size() != 4) throw DimensionError("upsample2x expects [N, C, H, W]");
  const std::int64_t h2 = 2 * s[2], w2 = 2 * s[3];
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(s[0] * s[1] * h2 * w2));
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::int64_t i = 0; i < h2; ++i)
      for (std::int64_t j = 0; j < w2; ++j) (*idx)[o++] = (nc * s[2] + i / 2) * s[3] + j / 2;
  return ag::gather(x, idx, {s[0], s[1], h2, w2});
}

// ---------------------------------------------------------------------------
// Backbones

Backbone::Backbone(BackboneKind kind, const ModelConfig& cfg, Rng& rng)
    : kind_(kind), widths_(cfg.widths) {
  const bool is2d = kind == BackboneKind::Conv2d;
  if (is2d) {
    stem2d_ = Conv2dLayer(1, widths_[0], 3, 1, true, rng);
  } else {
    stem3d_ = Conv3dLayer(1, widths_[0], 1, 3, 1, TemporalMode::CausalReplicate, true, rng);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t c_in = i == 0 ? widths_[0] : widths_[i - 1];
    const std::int64_t c_out = widths_[i];
    switch (kind) {
      case BackboneKind::Tdc:
        tdcr_.emplace_back(tdc::TdcrConfig{c_in, c_out, cfg.kt, 3, 2, TemporalMode::CausalReplicate}, rng);
        break;
      case BackboneKind::Conv3d:
        conv3d_.emplace_back(c_in, c_out, cfg.kt_3d, 3, 2, TemporalMode::CausalReplicate, false, rng);
        bn_.emplace_back(c_out);
        break;
      case BackboneKind::Conv2d:
        conv2d_.emplace_back(c_in, c_out, 3, 2, false, rng);
        bn_.emplace_back(c_out);
        break;
    }
    if (is2d) {
      point2d_.emplace_back(c_out, c_out, 1, 1, true, rng);
    } else {
      point3d_.emplace_back(c_out, c_out, 1, 1, 1, TemporalMode::CausalReplicate, true, rng);
    }
  }
}

Var Backbone::stem_forward(Var x) {
  const Shape s = x.shape();
  const bool is2d = kind_ == BackboneKind::Conv2d;
  if (s.size() != (is2d ? 4u : 5u) || s[1] != 1) {
    throw DimensionError("backbone input " + shape_str(s) + " is not single-channel " +
                         (is2d ? "[N,1,H,W]" : "[N,1,T,H,W]"));
  }
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 16 != 0 || w % 16 != 0) {
    throw ConfigError("backbone input " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by 16");
  }
  return ag::silu(is2d ? stem2d_.forward(x) : stem3d_.forward(x));
}

std::vector<Var> Backbone::forward(Var x, const ForwardCtx& ctx) {
  Var y = stem_forward(x);
  std::vector<Var> out;
  for (std::size_t i = 0; i < 4; ++i) {
    switch (kind_) {
      case BackboneKind::Tdc: y = tdcr_[i].forward(y, ctx); break;
      case BackboneKind::Conv3d: y = bn_[i].forward(conv3d_[i].forward(y), ctx); break;
      case BackboneKind::Conv2d: y = bn_[i].forward(conv2d_[i].forward(y), ctx); break;
    }
    y = ag::silu(kind_ == BackboneKind::Conv2d ? point2d_[i].forward(y) : point3d_[i].forward(y));
    if (i >= 1) out.push_back(y);
  }
  return out;
}

void Backbone::visit(const std::string& prefix, const StateVisitor& v) {
  if (kind_ == BackboneKind::Conv2d) {
    stem2d_.visit(prefix + ".stem", v);
  } else {
    stem3d_.visit(prefix + ".stem", v);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i);
    switch (kind_) {
      case BackboneKind::Tdc: tdcr_[i].visit(p + ".tdcr", v); break;
      case BackboneKind::Conv3d:
        conv3d_[i].visit(p + ".conv", v);
        bn_[i].visit(p + ".bn", v);
        break;
      case BackboneKind::Conv2d:
        conv2d_[i].visit(p + ".conv", v);
        bn_[i].visit(p + ".bn", v);
        break;
    }
    if (kind_ == BackboneKind::Conv2d) {
      point2d_[i].visit(p + ".point", v);
    } else {
      point3d_[i].visit(p + ".point", v);
    }
  }
}

std::vector<metrics::LayerDesc> Backbone::describe(const Shape& input, const std::string& name) const {
  std::vector<metrics::LayerDesc> out;
  const bool is2d = kind_ == BackboneKind::Conv2d;
  const std::int64_t n = input[0];
  const std::int64_t t = is2d ? 1 : input[2];
  std::int64_t h = input[input.size() - 2], w = input[input.size() - 1];
  auto shape = [&](std::int64_t c) { return is2d ? Shape{n, c, h, w} : Shape{n, c, t, h, w}; };
  auto conv = [&](const std::string& nm, std::int64_t cin, std::int64_t cout, std::int64_t kt,
                  std::int64_t k, std::int64_t stride, bool bias) {
    metrics::LayerDesc d;
    d.type = is2d ? "conv2d" : "conv3d";
    d.name = name + "." + nm;
    d.input = shape(cin);
    d.weight = is2d ? Shape{cout, cin, k, k} : Shape{cout, cin, kt, k, k};
    d.stride = stride;
    d.pad = (k - 1) / 2;
    d.bias = bias;
    out.push_back(d);
  };
  conv("stem", 1, widths_[0], 1, 3, 1, true);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t c_in = i == 0 ? widths_[0] : widths_[i - 1];
    const std::int64_t c_out = widths_[i];
    const std::string p = "stage" + std::to_string(i);
    if (kind_ == BackboneKind::Tdc) {
      out.push_back(tdcr_[i].describe(shape(c_in), name + "." + p + ".tdcr"));
    } else {
      conv(p + ".conv", c_in, c_out, kind_ == BackboneKind::Conv3d ? conv3d_[i].weight.value.dim(2) : 1, 3, 2,
           false);
    }
    h /= 2;
    w /= 2;
    if (kind_ != BackboneKind::Tdc) {
      metrics::LayerDesc bn;
      bn.type = "batch_norm";
      bn.name = name + "." + p + ".bn";
      bn.input = shape(c_out);
      out.push_back(bn);
    }
    conv(p + ".point", c_out, c_out, 1, 1, 1, true);
  }
  return out;
}

std::size_t Backbone::fuse() {
  std::size_t n = 0;
  for (auto& m : tdcr_) {
    if (!m.is_fused()) {
      m.set_fused(tdc::reparameterize(m));
      ++n;
    }
  }
  return n;
}

bool Backbone::fused() const {
  return !tdcr_.empty() && std::all_of(tdcr_.begin(), tdcr_.end(), [](const auto& m) { return m.is_fused(); });
}

// ---------------------------------------------------------------------------
// Neck and head

NeckHead::NeckHead(const std::vector<std::int64_t>& in_channels, std::int64_t width, Rng& rng)
    : in_(in_channels), width_(width) {
  for (auto c : in_) lateral_.emplace_back(c, width, 1, 1, true, rng);
  for (std::size_t i = 0; i < in_.size(); ++i) smooth_.emplace_back(width, width, 3, 1, true, rng);
  head_ = Conv2dLayer(width, width, 3, 1, true, rng);
  pred_ = Conv2dLayer(width, 5, 1, 1, true, rng);
  // Objectness starts at a 1% prior so the many empty cells do not swamp
  // the first updates.
  pred_.bias->value = Tensor(Shape{5});
  pred_.bias->value[4] = std::log(0.01 / 0.99);
}

std::vector<Var> NeckHead::forward(const std::vector<Var>& feats) {
  if (feats.size() != in_.size()) throw DimensionError("neck expects one feature map per level");
  const std::size_t levels = feats.size();
  std::vector<Var> p(levels);
  for (std::size_t l = levels; l-- > 0;) {
    p[l] = lateral_[l].forward(feats[l]);
    if (l + 1 < levels) p[l] = ag::add(p[l], upsample2x(p[l + 1]));
  }
  std::vector<Var> out;
  for (std::size_t l = 0; l < levels; ++l) {
    Var s = ag::silu(smooth_[l].forward(p[l]));
    out.push_back(pred_.forward(ag::silu(head_.forward(s))));
  }
  return out;
}

void NeckHead::visit(const std::string& prefix, const StateVisitor& v) {
  for (std::size_t l = 0; l < lateral_.size(); ++l) lateral_[l].visit(prefix + ".lateral" + std::to_string(l), v);
  for (std::size_t l = 0; l < smooth_.size(); ++l) smooth_[l].visit(prefix + ".smooth" + std::to_string(l), v);
  head_.visit(prefix + ".head", v);
  pred_.visit(prefix + ".pred", v);
}

std::vector<metrics::LayerDesc> NeckHead::describe(std::int64_t n, const std::vector<Shape>& grids,
                                                   const std::string& name) const {
  std::vector<metrics::LayerDesc> out;
  auto conv = [&](const std::string& nm, std::int64_t cin, std::int64_t cout, std::int64_t k, const Shape& g,
                  bool shared = false) {
    metrics::LayerDesc d;
    d.type = "conv2d";
    d.shared = shared;
    d.name = name + "." + nm;
    d.input = {n, cin, g[0], g[1]};
    d.weight = {cout, cin, k, k};
    d.pad = (k - 1) / 2;
    d.bias = true;
    out.push_back(d);
  };
  for (std::size_t l = 0; l < grids.size(); ++l) {
    const std::string s = std::to_string(l);
    conv("lateral" + s, in_[l], width_, 1, grids[l]);
    if (l + 1 < grids.size()) {
      metrics::LayerDesc a;
      a.type = "add";
      a.name = name + ".topdown" + s;
      a.input = {n, width_, grids[l][0], grids[l][1]};
      out.push_back(a);
    }
    conv("smooth" + s, width_, width_, 3, grids[l]);
    // One head serves every level; its weights are counted at level 0.
    conv("head@" + s, width_, width_, 3, grids[l], l > 0);
    conv("pred@" + s, width_, 5, 1, grids[l], l > 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detector

namespace {

attn::StageConfig stage_config(const ModelConfig& cfg, std::size_t stage) {
  const std::int64_t w = cfg.widths[stage + 1];
  const std::int64_t stride = cfg.strides()[stage];
  const std::int64_t grid = std::min(cfg.height, cfg.width) / stride;
  attn::StageConfig s;
  s.c_tdcf = s.c_stf = s.c_sf = w;
  s.dim = w;
  s.heads = cfg.heads;
  s.p = std::min(cfg.window_p, cfg.frames);
  s.m = std::min(cfg.window_m, grid);
  s.query = cfg.query;
  return s;
}

std::vector<Var> detach_all(Var like, const std::vector<Var>& xs) {
  std::vector<Var> out;
  for (const auto& x : xs) out.push_back(like.tape()->constant(x.value()));
  return out;
}

}  // namespace

TdcNet::TdcNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const bool full = cfg_.arch == Arch::Full;
  if (full || cfg_.arch == Arch::Tdcr) tdc_ = Backbone(BackboneKind::Tdc, cfg_, rng);
  if (full || cfg_.arch == Arch::Plain3d) b3d_ = Backbone(BackboneKind::Conv3d, cfg_, rng);
  if (full) {
    b2d_ = Backbone(BackboneKind::Conv2d, cfg_, rng);
    for (std::size_t i = 0; i < 3; ++i) sta_.emplace_back(stage_config(cfg_, i), rng);
  }
  const std::vector<std::int64_t> ex{cfg_.widths[1], cfg_.widths[2], cfg_.widths[3]};
  neck_ = NeckHead(ex, cfg_.neck_width, rng);
  if (full) {
    aux2d_ = NeckHead(ex, cfg_.neck_width, rng);
    aux3d_ = NeckHead(ex, cfg_.neck_width, rng);
  }
}

bool TdcNet::has_group(Group g) const {
  return g == Group::Main || cfg_.arch == Arch::Full;
}

void TdcNet::set_frozen(Group g, bool frozen) {
  if (!has_group(g)) throw UsageError("model has no such parameter group");
  frozen_[static_cast<std::size_t>(g)] = frozen;
}

std::vector<Var> TdcNet::forward(Var clip, const ForwardCtx& ctx, std::vector<Tensor>* features) {
  const Shape s = clip.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != cfg_.frames || s[3] != cfg_.height || s[4] != cfg_.width) {
    throw DimensionError("clip " + shape_str(s) + " does not match model input [N,1," +
                         std::to_string(cfg_.frames) + "," + std::to_string(cfg_.height) + "," +
                         std::to_string(cfg_.width) + "]");
  }
  const std::int64_t last = s[2] - 1;
  auto run = [&](Group g, auto&& fn) {
    if (!frozen(g)) return fn(clip, ctx);
    Tape side;
    Var x = side.constant(clip.value());
    return detach_all(clip, fn(x, ForwardCtx{BnMode::Infer, false}));
  };
  std::vector<Var> feats;
  switch (cfg_.arch) {
    case Arch::Full: {
      auto tdcf = tdc_.forward(clip, ctx);
      auto stf = run(Group::Backbone3d, [&](Var x, const ForwardCtx& c) { return b3d_.forward(x, c); });
      auto sf = run(Group::Backbone2d,
                    [&](Var x, const ForwardCtx& c) { return b2d_.forward(select_time(x, last), c); });
      for (std::size_t i = 0; i < 3; ++i) feats.push_back(select_time(sta_[i].forward(tdcf[i], stf[i], sf[i]), last));
      break;
    }
    case Arch::Tdcr:
      for (auto& f : tdc_.forward(clip, ctx)) feats.push_back(select_time(f, last));
      break;
    case Arch::Plain3d:
      for (auto& f : b3d_.forward(clip, ctx)) feats.push_back(select_time(f, last));
      break;
  }
  if (features) {
    features->clear();
    for (auto& f : feats) features->push_back(f.value());
  }
  return neck_.forward(feats);
}

std::vector<Var> TdcNet::forward_aux2d(Var frame, const ForwardCtx& ctx) {
  if (cfg_.arch != Arch::Full) throw UsageError("auxiliary 2D path exists only in the full model");
  return aux2d_.forward(b2d_.forward(frame, ctx));
}

std::vector<Var> TdcNet::forward_aux3d(Var clip, const ForwardCtx& ctx) {
  if (cfg_.arch != Arch::Full) throw UsageError("auxiliary 3D path exists only in the full model");
  std::vector<Var> feats;
  const std::int64_t last = clip.shape()[2] - 1;
  for (auto& f : b3d_.forward(clip, ctx)) feats.push_back(select_time(f, last));
  return aux3d_.forward(feats);
}

void TdcNet::visit_group(Group g, const StateVisitor& v) {
  switch (g) {
    case Group::Backbone2d:
      if (cfg_.arch != Arch::Full) return;
      b2d_.visit("b2d", v);
      aux2d_.visit("aux2d", v);
      return;
    case Group::Backbone3d:
      if (cfg_.arch != Arch::Full) return;
      b3d_.visit("b3d", v);
      aux3d_.visit("aux3d", v);
      return;
    case Group::Main:
      if (cfg_.arch != Arch::Plain3d) tdc_.visit("tdc", v);
      if (cfg_.arch == Arch::Plain3d) b3d_.visit("b3d", v);
      for (std::size_t i = 0; i < sta_.size(); ++i) sta_[i].visit("sta" + std::to_string(i), v);
      neck_.visit("neck", v);
      return;
  }
}

void TdcNet::visit(const StateVisitor& v) {
  visit_group(Group::Main, v);
  visit_group(Group::Backbone3d, v);
  visit_group(Group::Backbone2d, v);
}

std::vector<metrics::LayerDesc> TdcNet::describe(std::int64_t n) const {
  std::vector<metrics::LayerDesc> out;
  auto append = [&](std::vector<metrics::LayerDesc> v) { out.insert(out.end(), v.begin(), v.end()); };
  const Shape clip{n, 1, cfg_.frames, cfg_.height, cfg_.width};
  std::vector<Shape> grids;
  for (auto s : cfg_.strides()) grids.push_back({cfg_.height / s, cfg_.width / s});
  if (cfg_.arch != Arch::Plain3d) append(tdc_.describe(clip, "tdc"));
  if (cfg_.arch != Arch::Tdcr) append(b3d_.describe(clip, "b3d"));
  if (cfg_.arch == Arch::Full) {
    append(b2d_.describe({n, 1, cfg_.height, cfg_.width}, "b2d"));
    for (std::size_t i = 0; i < 3; ++i) {
      append(sta_[i].describe(n, cfg_.frames, grids[i][0], grids[i][1], "sta" + std::to_string(i)));
    }
  }
  append(neck_.describe(n, grids, "neck"));
  return out;
}

std::size_t TdcNet::fuse() { return cfg_.arch == Arch::Plain3d ? 0 : tdc_.fuse(); }

bool TdcNet::fused() const { return cfg_.arch != Arch::Plain3d && tdc_.fused(); }

// ---------------------------------------------------------------------------
// Box coding

std::size_t assign_level(const metrics::Box& box, const std::vector<std::int64_t>& strides) {
  if (!(box.w > 0) || !(box.h > 0)) throw UsageError("target box needs positive extent");
  const double size = std::log(std::sqrt(box.w * box.h));
  std::size_t best = 0;
  double best_d = std::abs(size - std::log(static_cast<double>(strides[0])));
  for (std::size_t l = 1; l < strides.size(); ++l) {
    const double d = std::abs(size - std::log(static_cast<double>(strides[l])));
    if (d < best_d) {
      best = l;
      best_d = d;
    }
  }
  return best;
}

Encoded encode_box(const metrics::Box& box, const std::vector<std::int64_t>& strides,
                   const std::vector<std::pair<std::int64_t, std::int64_t>>& grids) {
  Encoded e;
  e.level = assign_level(box, strides);
  const double s = static_cast<double>(strides[e.level]);
  const double cx = box.x + box.w / 2, cy = box.y + box.h / 2;
  e.j = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(cx / s)), 0, grids[e.level].second - 1);
  e.i = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(cy / s)), 0, grids[e.level].first - 1);
  e.dx = cx / s - static_cast<double>(e.j) - 0.5;
  e.dy = cy / s - static_cast<double>(e.i) - 0.5;
  e.lw = std::log(box.w / s);
  e.lh = std::log(box.h / s);
  return e;
}

metrics::Box decode_box(const Encoded& e, const std::vector<std::int64_t>& strides) {
  const double s = static_cast<double>(strides.at(e.level));
  const double cx = (static_cast<double>(e.j) + 0.5 + e.dx) * s;
  const double cy = (static_cast<double>(e.i) + 0.5 + e.dy) * s;
  const double w = s * std::exp(e.lw), h = s * std::exp(e.lh);
  return {cx - w / 2, cy - h / 2, w, h};
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// IoU of a predicted corner box with a ground truth, and dIoU/d(x1, y1, x2, y2).
double iou_with_grad(double px1, double py1, double px2, double py2, const metrics::Box& g, double grad[4]) {
  const double gx1 = g.x, gy1 = g.y, gx2 = g.x + g.w, gy2 = g.y + g.h;
  std::fill(grad, grad + 4, 0.0);
  const double ix = std::min(px2, gx2) - std::max(px1, gx1);
  const double iy = std::min(py2, gy2) - std::max(py1, gy1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double pw = px2 - px1, ph = py2 - py1;
  const double inter = ix * iy;
  const double uni = pw * ph + g.w * g.h - inter;
  const double d_inter = (pw * ph + g.w * g.h) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  // d inter / d corner, then d area / d corner.
  const double di[4] = {px1 > gx1 ? -iy : 0.0, py1 > gy1 ? -ix : 0.0, px2 < gx2 ? iy : 0.0, py2 < gy2 ? ix : 0.0};
  const double da[4] = {-ph, -pw, ph, pw};
  for (int k = 0; k < 4; ++k) grad[k] = d_inter * di[k] + d_area * da[k];
  return inter / uni;
}

}  // namespace

LossResult detection_loss(const std::vector<Var>& raw, const std::vector<std::vector<metrics::Box>>& targets,
                          const std::vector<std::int64_t>& strides) {
  if (raw.empty() || raw.size() != strides.size()) throw DimensionError("one raw map per stride expected");
  const std::int64_t n = raw[0].shape()[0];
  if (static_cast<std::int64_t>(targets.size()) != n) throw DimensionError("one target list per batch item expected");
  std::vector<std::pair<std::int64_t, std::int64_t>> grids;
  for (const auto& r : raw) {
    const Shape s = r.shape();
    if (s.size() != 4 || s[0] != n || s[1] != 5) throw DimensionError("raw map " + shape_str(s) + " is not [N,5,H,W]");
    grids.emplace_back(s[2], s[3]);
  }

  struct Pos {
    Encoded e;
    std::int64_t n;
    metrics::Box gt;
  };
  std::vector<Pos> pos;
  std::set<std::tuple<std::size_t, std::int64_t, std::int64_t, std::int64_t>> claimed;
  for (std::int64_t b = 0; b < n; ++b) {
    for (const auto& box : targets[static_cast<std::size_t>(b)]) {
      const Encoded e = encode_box(box, strides, grids);
      if (!claimed.insert({e.level, b, e.i, e.j}).second) continue;
      pos.push_back({e, b, box});
    }
  }
  const double np = static_cast<double>(pos.size());
  const double norm = std::max(1.0, np);

  auto grads = std::make_shared<std::vector<Tensor>>();
  LossBreakdown parts;
  parts.positives = static_cast<std::int64_t>(pos.size());
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const Tensor& r = raw[l].value();
    Tensor g(r.shape());
    const std::int64_t plane = grids[l].first * grids[l].second;
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t base = (b * 5 + 4) * plane;
      for (std::int64_t c = 0; c < plane; ++c) {
        const double z = r[base + c];
        parts.l_obj += softplus(z) / norm;
        g[base + c] = sigmoid(z) / norm;
      }
    }
    grads->push_back(std::move(g));
  }
  for (const auto& p : pos) {
    const Tensor& r = raw[p.e.level].value();
    Tensor& g = (*grads)[p.e.level];
    const std::int64_t gw = grids[p.e.level].second, plane = grids[p.e.level].first * gw;
    auto at = [&](std::int64_t ch) { return (p.n * 5 + ch) * plane + p.e.i * gw + p.e.j; };
    const double z = r[at(4)];
    parts.l_obj -= z / norm;  // label 1 term of the objectness BCE
    g[at(4)] -= 1.0 / norm;
    parts.l_cls += softplus(-z) / norm;
    g[at(4)] += (sigmoid(z) - 1.0) / norm;

    const double s = static_cast<double>(strides[p.e.level]);
    const double cx = (static_cast<double>(p.e.j) + 0.5 + r[at(0)]) * s;
    const double cy = (static_cast<double>(p.e.i) + 0.5 + r[at(1)]) * s;
    const double w = s * std::exp(r[at(2)]), h = s * std::exp(r[at(3)]);
    double gc[4];
    const double iou = iou_with_grad(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, p.gt, gc);
    parts.l_reg += (1.0 - iou) / np;
    const double k = -1.0 / np;
    g[at(0)] += k * (gc[0] + gc[2]) * s;
    g[at(1)] += k * (gc[1] + gc[3]) * s;
    g[at(2)] += k * (gc[2] - gc[0]) * 0.5 * w;
    g[at(3)] += k * (gc[3] - gc[1]) * 0.5 * h;
  }
  parts.total = parts.l_reg + parts.l_obj + parts.l_cls;
  if (!std::isfinite(parts.total)) throw NumericError("detection loss is not finite");

  Tape* tape = raw[0].tape();
  Var out = tape->record("detection_loss", Tensor::scalar(parts.total), raw,
                         [raw, grads](Tape& t, const Tensor& go) {
                           for (std::size_t l = 0; l < raw.size(); ++l) {
                             if (!t.requires_grad(raw[l])) continue;
                             Tensor& dst = t.grad_buffer(raw[l]);
                             const Tensor& g = (*grads)[l];
                             for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += go[0] * g[i];
                           }
                         });
  return {out, parts};
}

// ---------------------------------------------------------------------------
// Decoding

std::vector<Detection> nms(std::vector<Detection> dets, double nms_iou) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool keep = true;
    for (const auto& k : kept) {
      if (metrics::iou(d.box(), k.box()) > nms_iou) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

std::vector<std::vector<Detection>> decode_predictions(const std::vector<Tensor>& raw,
                                                       const std::vector<std::int64_t>& strides,
                                                       double conf_threshold, double nms_iou) {
  if (raw.size() != strides.size()) throw DimensionError("one raw map per stride expected");
  const std::int64_t n = raw.empty() ? 0 : raw[0].dim(0);
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<Detection> cand;
    for (std::size_t l = 0; l < raw.size(); ++l) {
      const Tensor& r = raw[l];
      const std::int64_t gh = r.dim(2), gw = r.dim(3), plane = gh * gw;
      for (std::int64_t i = 0; i < gh; ++i)
        for (std::int64_t j = 0; j < gw; ++j) {
          auto at = [&](std::int64_t ch) { return r[(b * 5 + ch) * plane + i * gw + j]; };
          const double conf = sigmoid(at(4));
          if (conf < conf_threshold) continue;
          const metrics::Box box = decode_box({l, i, j, at(0), at(1), at(2), at(3)}, strides);
          Detection d;
          d.cx = box.x + box.w / 2;
          d.cy = box.y + box.h / 2;
          d.w = box.w;
          d.h = box.h;
          d.objectness = conf;
          d.class_score = conf;
          d.frame = static_cast<std::size_t>(b);
          cand.push_back(d);
        }
    }
    out[static_cast<std::size_t>(b)] = nms(std::move(cand), nms_iou);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

TensorArchive state_archive(TdcNet& net) {
  TensorArchive a;
  nlohmann::json tree = nlohmann::json::array();
  net.visit({[&](const std::string& name, Parameter& p) {
               a.add(name, p.value);
               tree.push_back({{"name", name}, {"kind", "param"}, {"shape", p.value.shape()}});
             },
             [&](const std::string& name, Tensor& t) {
               a.add(name, t);
               tree.push_back({{"name", name}, {"kind", "buffer"}, {"shape", t.shape()}});
             }});
  const auto& cfg = net.config();
  a.metadata["model"] = cfg.to_json();
  a.metadata["fused"] = net.fused();
  a.metadata["kt"] = cfg.kt;
  a.metadata["window_p"] = cfg.window_p;
  a.metadata["window_m"] = cfg.window_m;
  a.metadata["widths"] = cfg.widths;
  a.metadata["modules"] = tree;
  return a;
}

void save_checkpoint(const std::filesystem::path& path, TdcNet& net, const nlohmann::json& extra) {
  TensorArchive a = state_archive(net);
  for (auto it = extra.begin(); it != extra.end(); ++it) a.metadata[it.key()] = it.value();
  a.save(path);
}

void load_state(TdcNet& net, const TensorArchive& archive) {
  auto copy = [&](const std::string& name, Tensor& dst) {
    if (!archive.contains(name)) throw DimensionError("checkpoint lacks tensor '" + name + "'");
    Tensor src = archive.get(name);
    if (src.shape() != dst.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                           ", model expects " + shape_str(dst.shape()));
    }
    dst = std::move(src);
  };
  net.visit({[&](const std::string& name, Parameter& p) {
               copy(name, p.value);
               p.zero_grad();
             },
             [&](const std::string& name, Tensor& t) { copy(name, t); }});
  // A second pass lets layers that cache plain copies of parameters resync.
  net.visit({[](const std::string&, Parameter&) {}, [](const std::string&, Tensor&) {}});
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  TensorArchive a = TensorArchive::load(path);
  if (!a.metadata.contains("model")) throw DimensionError("checkpoint has no model metadata");
  LoadedCheckpoint out;
  out.metadata = a.metadata;
  out.net = std::make_unique<TdcNet>(ModelConfig::from_json(a.metadata["model"]), 0);
  if (a.metadata.value("fused", false)) out.net->fuse();
  load_state(*out.net, a);
  return out;
}

}  // namespace tdcnet::model
