// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tdcnet/errors.hpp"
#include "tdcnet/model.hpp"

using namespace tdcnet;
using model::Arch;

namespace {

model::ModelConfig tiny(Arch arch) {
  model::ModelConfig c;
  c.arch = arch;
  c.height = c.width = 32;
  c.widths = {4, 8, 16, 32};
  c.neck_width = 8;
  c.heads = 2;
  c.window_m = 4;
  return c;
}

std::vector<Tensor> infer(model::TdcNet& net, const Tensor& clip, std::vector<Tensor>* feats = nullptr) {
  Tape t;
  std::vector<Tensor> out;
  for (auto& v : net.forward(t.constant(clip), ForwardCtx{BnMode::Infer, false}, feats)) out.push_back(v.value());
  return out;
}

double max_abs_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double m = 0;
  for (std::size_t l = 0; l < a.size(); ++l) m = std::max(m, tdcnet::max_abs_diff(a[l], b[l]));
  return m;
}

// Random running statistics so that infer-mode BN is not the identity.
void randomise_buffers(model::TdcNet& net, Rng& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  net.visit({[](const std::string&, Parameter&) {},
             [&](const std::string& name, Tensor& t) {
               const bool var = name.find("running_var") != std::string::npos;
               for (auto& v : t.storage()) v = var ? u(rng) : u(rng) - 1.0;
             }});
}

// Independent loss: objectness BCE over every cell, class BCE and 1 - IoU
// over the positive cells, normalised by the positive count.
double loss_oracle(const std::vector<Tensor>& raw, const std::vector<metrics::Box>& gts,
                   const std::vector<std::int64_t>& strides) {
  std::vector<std::pair<std::int64_t, std::int64_t>> grids;
  for (const auto& r : raw) grids.emplace_back(r.dim(2), r.dim(3));
  std::vector<model::Encoded> pos;
  for (const auto& b : gts) {
    const auto e = model::encode_box(b, strides, grids);
    bool dup = false;
    for (const auto& p : pos) dup |= p.level == e.level && p.i == e.i && p.j == e.j;
    if (!dup) pos.push_back(e);
  }
  const double norm = std::max<double>(1.0, static_cast<double>(pos.size()));
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double obj = 0, cls = 0, reg = 0;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const auto [gh, gw] = grids[l];
    for (std::int64_t i = 0; i < gh; ++i)
      for (std::int64_t j = 0; j < gw; ++j) {
        bool positive = false;
        for (const auto& p : pos) positive |= p.level == l && p.i == i && p.j == j;
        obj += oracle::bce(sig(raw[l][(4 * gh + i) * gw + j]), positive ? 1.0 : 0.0);
      }
  }
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const auto& p = pos[k];
    const Tensor& r = raw[p.level];
    const std::int64_t gh = r.dim(2), gw = r.dim(3);
    auto at = [&](int ch) { return r[(ch * gh + p.i) * gw + p.j]; };
    cls += oracle::bce(sig(at(4)), 1.0);
    const double s = static_cast<double>(strides[p.level]);
    const double w = s * std::exp(at(2)), h = s * std::exp(at(3));
    const double cx = (static_cast<double>(p.j) + 0.5 + at(0)) * s, cy = (static_cast<double>(p.i) + 0.5 + at(1)) * s;
    // The ground truth that produced this cell.
    metrics::Box gt{};
    for (const auto& b : gts) {
      const auto e = model::encode_box(b, strides, grids);
      if (e.level == p.level && e.i == p.i && e.j == p.j) {
        gt = b;
        break;
      }
    }
    const double ix = std::max(0.0, std::min(cx + w / 2, gt.x + gt.w) - std::max(cx - w / 2, gt.x));
    const double iy = std::max(0.0, std::min(cy + h / 2, gt.y + gt.h) - std::max(cy - h / 2, gt.y));
    const double inter = ix * iy;
    reg += 1.0 - inter / (w * h + gt.w * gt.h - inter);
  }
  return obj / norm + cls / norm + (pos.empty() ? 0.0 : reg / static_cast<double>(pos.size()));
}

}  // namespace

TEST_CASE("every architecture emits three [N,5,H/s,W/s] maps") {
  Rng rng(1);
  const Tensor clip = Tensor::uniform({2, 1, 5, 32, 32}, rng, 0.0, 1.0);
  for (Arch a : {Arch::Full, Arch::Tdcr, Arch::Plain3d}) {
    CAPTURE(model::to_string(a));
    model::TdcNet net(tiny(a), 3);
    std::vector<Tensor> feats;
    const auto out = infer(net, clip, &feats);
    REQUIRE(out.size() == 3);
    CHECK(out[0].shape() == Shape{2, 5, 8, 8});
    CHECK(out[1].shape() == Shape{2, 5, 4, 4});
    CHECK(out[2].shape() == Shape{2, 5, 2, 2});
    REQUIRE(feats.size() == 3);
    CHECK(feats[0].dim(2) == 8);
  }
  model::TdcNet net(tiny(Arch::Tdcr), 3);
  Tape t;
  CHECK_THROWS_AS(net.forward(t.constant(Tensor(Shape{2, 1, 4, 32, 32})), ForwardCtx{}), DimensionError);
  CHECK_THROWS_AS(net.forward_aux2d(t.constant(Tensor(Shape{2, 1, 32, 32})), ForwardCtx{}), UsageError);
}

TEST_CASE("model config validation rejects impossible settings") {
  auto c = tiny(Arch::Full);
  c.kt = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(Arch::Full);
  c.height = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(Arch::Full);
  c.widths = {4, 8, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(model::arch_from_string("resnet"), ConfigError);
  c = tiny(Arch::Plain3d);
  CHECK(model::ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("the TDC backbone cannot see a static scene") {
  // A repeated frame makes every TDCR input temporally constant, so the
  // predictions no longer depend on what the frame shows.
  Rng rng(5);
  model::TdcNet net(tiny(Arch::Tdcr), 11);
  randomise_buffers(net, rng);
  auto static_clip = [&](const Tensor& frame) {
    Tensor c(Shape{1, 1, 5, 32, 32});
    for (std::int64_t t = 0; t < 5; ++t) std::copy_n(frame.ptr(), 1024, c.ptr() + t * 1024);
    return c;
  };
  const auto a = infer(net, static_clip(Tensor::uniform({32, 32}, rng, 0.0, 1.0)));
  const auto b = infer(net, static_clip(Tensor::uniform({32, 32}, rng, 0.0, 1.0)));
  CHECK(max_abs_diff(a, b) < 1e-10);
  // A moving clip does change them.
  const auto c = infer(net, Tensor::uniform({1, 1, 5, 32, 32}, rng, 0.0, 1.0));
  CHECK(max_abs_diff(a, c) > 1e-3);
}

TEST_CASE("construction and forward are deterministic per seed") {
  Rng rng(2);
  const Tensor clip = Tensor::uniform({1, 1, 5, 32, 32}, rng, 0.0, 1.0);
  model::TdcNet a(tiny(Arch::Full), 9), b(tiny(Arch::Full), 9), c(tiny(Arch::Full), 10);
  const auto ya = infer(a, clip), yb = infer(b, clip), yc = infer(c, clip);
  for (std::size_t l = 0; l < 3; ++l) CHECK(ya[l].storage() == yb[l].storage());
  CHECK(max_abs_diff(ya, yc) > 0);
}

TEST_CASE("a zero head decodes to cell-centred stride-sized boxes at confidence 1/2") {
  model::TdcNet net(tiny(Arch::Tdcr), 4);
  auto& pred = net.neck().predictor();
  std::fill(pred.weight.value.storage().begin(), pred.weight.value.storage().end(), 0.0);
  std::fill(pred.bias->value.storage().begin(), pred.bias->value.storage().end(), 0.0);
  Rng rng(3);
  const auto raw = infer(net, Tensor::uniform({1, 1, 5, 32, 32}, rng, 0.0, 1.0));
  for (const auto& r : raw)
    for (double v : r.storage()) CHECK(v == 0.0);
  const auto strides = net.config().strides();
  CHECK(model::decode_predictions(raw, strides, 0.6)[0].empty());
  // Without suppression every cell survives: 64 + 16 + 4.
  const auto all = model::decode_predictions(raw, strides, 0.4, 1.0);
  REQUIRE(all[0].size() == 84);
  for (const auto& d : all[0]) {
    CHECK(d.objectness == doctest::Approx(0.5).epsilon(1e-15));
    const double s = d.w;
    CHECK((s == 4 || s == 8 || s == 16));
    CHECK(d.h == s);
    CHECK(std::fmod(d.cx - s / 2, s) == doctest::Approx(0.0));
  }
}

TEST_CASE("box encoding roundtrips and picks the level nearest in log scale") {
  const std::vector<std::int64_t> strides{4, 8, 16};
  const std::vector<std::pair<std::int64_t, std::int64_t>> grids{{32, 32}, {16, 16}, {8, 8}};
  CHECK(model::assign_level({0, 0, 4, 4}, strides) == 0);
  CHECK(model::assign_level({0, 0, 11, 11}, strides) == 1);
  CHECK(model::assign_level({0, 0, 30, 30}, strides) == 2);
  // The 4/8 boundary is at sqrt(32) = 5.657.
  CHECK(model::assign_level({0, 0, 5.6, 5.6}, strides) == 0);
  CHECK(model::assign_level({0, 0, 5.7, 5.7}, strides) == 1);
  Rng rng(8);
  std::uniform_real_distribution<double> pos(0.0, 100.0), size(2.0, 24.0);
  for (int k = 0; k < 200; ++k) {
    const metrics::Box b{pos(rng), pos(rng), size(rng), size(rng)};
    const auto e = model::encode_box(b, strides, grids);
    CHECK(std::abs(e.dx) <= 0.5 + 1e-12);
    const auto d = model::decode_box(e, strides);
    CHECK(std::abs(d.x - b.x) < 1e-12);
    CHECK(std::abs(d.y - b.y) < 1e-12);
    CHECK(std::abs(d.w - b.w) < 1e-12);
    CHECK(std::abs(d.h - b.h) < 1e-12);
  }
  CHECK_THROWS_AS(model::assign_level({0, 0, 0, 3}, strides), UsageError);
}

TEST_CASE("detection loss matches the independent oracle") {
  const std::vector<std::int64_t> strides{4, 8, 16};
  Rng rng(12);
  SUBCASE("all-zero maps without targets cost ln 2 per cell") {
    Tape t;
    std::vector<Var> raw;
    for (std::int64_t s : strides) raw.push_back(t.constant(Tensor(Shape{1, 5, 32 / s, 32 / s})));
    const auto r = model::detection_loss(raw, {{}}, strides);
    CHECK(r.parts.positives == 0);
    CHECK(r.parts.l_obj == doctest::Approx(84 * std::log(2.0)).epsilon(1e-14));
    CHECK(r.parts.l_reg == 0.0);
    CHECK(r.parts.l_cls == 0.0);
  }
  SUBCASE("random maps with targets, including two boxes in one cell") {
    std::vector<Tensor> maps;
    for (std::int64_t s : strides) maps.push_back(Tensor::randn({1, 5, 32 / s, 32 / s}, rng, 0.7));
    const std::vector<metrics::Box> gts{{5.3, 6.1, 6.2, 5.7}, {17.4, 3.2, 11.0, 12.5}, {5.0, 6.0, 6.0, 6.0},
                                        {1.0, 20.0, 3.0, 4.0}};
    Tape t;
    std::vector<Var> raw;
    for (const auto& m : maps) raw.push_back(t.constant(m));
    const auto r = model::detection_loss(raw, {gts}, strides);
    CHECK(r.parts.positives == 3);
    CHECK(r.total.value()[0] == doctest::Approx(loss_oracle(maps, gts, strides)).epsilon(1e-12));
  }
  SUBCASE("batch and shape errors") {
    Tape t;
    std::vector<Var> raw{t.constant(Tensor(Shape{2, 5, 8, 8})), t.constant(Tensor(Shape{2, 5, 4, 4})),
                         t.constant(Tensor(Shape{2, 5, 2, 2}))};
    CHECK_THROWS_AS(model::detection_loss(raw, {{}}, strides), DimensionError);
    raw[1] = t.constant(Tensor(Shape{2, 4, 4, 4}));
    CHECK_THROWS_AS(model::detection_loss(raw, {{}, {}}, strides), DimensionError);
  }
}

TEST_CASE("NMS keeps the strongest of overlapping boxes") {
  auto det = [](double cx, double cy, double s, double conf) {
    model::Detection d;
    d.cx = cx;
    d.cy = cy;
    d.w = d.h = s;
    d.objectness = d.class_score = conf;
    return d;
  };
  // IoU of the first two is 90/110 (shifted by 1 px on a 10 px box).
  const auto kept = model::nms({det(10, 10, 10, 0.7), det(11, 10, 10, 0.9), det(40, 40, 10, 0.8)}, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].objectness == 0.9);
  CHECK(kept[1].objectness == 0.8);
  CHECK(model::nms({det(10, 10, 10, 0.7), det(11, 10, 10, 0.9)}, 0.7).size() == 1);
  CHECK(model::nms({det(10, 10, 10, 0.7), det(11, 10, 10, 0.9)}, 0.82).size() == 2);
  CHECK(model::nms({det(10, 10, 10, 0.7), det(15, 10, 10, 0.9)}, 0.5).size() == 2);
}

TEST_CASE("fusing every TDCR layer preserves the model output") {
  Rng rng(21);
  for (Arch a : {Arch::Full, Arch::Tdcr}) {
    CAPTURE(model::to_string(a));
    model::TdcNet net(tiny(a), 5);
    randomise_buffers(net, rng);
    const Tensor clip = Tensor::uniform({2, 1, 5, 32, 32}, rng, 0.0, 1.0);
    const auto before = infer(net, clip);
    const auto cost_before = metrics::count_params_flops(net.describe(1));
    CHECK(net.fuse() == 4);
    CHECK(net.fused());
    CHECK(max_abs_diff(before, infer(net, clip)) < 1e-6);
    const auto cost_after = metrics::count_params_flops(net.describe(1));
    CHECK(cost_after.params < cost_before.params);
    CHECK(cost_after.flops < cost_before.flops);
    CHECK(net.fuse() == 0);
  }
  model::TdcNet plain(tiny(Arch::Plain3d), 5);
  CHECK(plain.fuse() == 0);
}

TEST_CASE("tiny model gradients match central differences") {
  Rng rng(31);
  model::TdcNet net(tiny(Arch::Tdcr), 6);
  std::vector<Parameter*> params;
  net.visit({[&](const std::string&, Parameter& p) { params.push_back(&p); }, [](const std::string&, Tensor&) {}});
  const Tensor clip = Tensor::uniform({2, 1, 5, 32, 32}, rng, 0.0, 1.0);
  const std::vector<std::vector<metrics::Box>> boxes{{{4.2, 9.5, 6.0, 6.5}}, {{20.1, 3.3, 7.4, 5.2}}};
  auto build = [&](Tape& t) {
    return model::detection_loss(net.forward(t.constant(clip), ForwardCtx{BnMode::Train, false}), boxes,
                                 net.config().strides())
        .total;
  };
  CHECK(grad_check_directional(build, params).max_rel_error < 1e-6);
  // The head and the first TDCR base, entry by entry on a sample.
  GradCheckOptions o;
  o.max_entries = 8;
  o.selection = EntrySelection::Largest;
  const std::vector<Parameter*> few{params.front(), params.back()};
  CHECK(grad_check_params(build, few, o).max_rel_error < 1e-6);
}

TEST_CASE("checkpoints roundtrip branched and fused models") {
  const auto dir = std::filesystem::temp_directory_path() / "tdcnet_test_model";
  std::filesystem::create_directories(dir);
  Rng rng(41);
  model::TdcNet net(tiny(Arch::Full), 8);
  randomise_buffers(net, rng);
  const Tensor clip = Tensor::uniform({1, 1, 5, 32, 32}, rng, 0.0, 1.0);
  const auto y = infer(net, clip);
  model::save_checkpoint(dir / "a.ckpt", net, {{"note", "x"}});
  auto loaded = model::load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.metadata.at("note") == "x");
  CHECK(loaded.net->config().to_json() == net.config().to_json());
  const auto y2 = infer(*loaded.net, clip);
  for (std::size_t l = 0; l < 3; ++l) CHECK(y[l].storage() == y2[l].storage());

  net.fuse();
  const auto yf = infer(net, clip);
  model::save_checkpoint(dir / "f.ckpt", net);
  auto lf = model::load_checkpoint(dir / "f.ckpt");
  CHECK(lf.net->fused());
  const auto yf2 = infer(*lf.net, clip);
  for (std::size_t l = 0; l < 3; ++l) CHECK(yf[l].storage() == yf2[l].storage());

  // Wrong shapes are refused.
  model::TdcNet other(tiny(Arch::Tdcr), 8);
  CHECK_THROWS(model::load_state(other, model::state_archive(net)));
  std::filesystem::remove_all(dir);
}
