// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/verify.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "tdcnet/attention.hpp"
#include "tdcnet/autograd.hpp"
#include "tdcnet/errors.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/tdc.hpp"

namespace tdcnet::verify {

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

nlohmann::json Report::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    arr.push_back({{"suite", c.suite},
                   {"name", c.name},
                   {"residual", std::isfinite(c.residual) ? nlohmann::json(c.residual) : nlohmann::json(nullptr)},
                   {"tolerance", c.tolerance},
                   {"passed", c.passed},
                   {"detail", c.detail}});
  }
  return {{"passed", passed()}, {"checks", arr}};
}

const std::vector<std::string>& suites() {
  static const std::vector<std::string> s{"tdc", "attention", "grads", "metrics"};
  return s;
}

namespace {

using tdc::Variant;

/// Check passes when residual < tolerance (NaN fails).
Check below(const std::string& suite, const std::string& name, double residual, double tol, std::string detail = "") {
  return {suite, name, residual, tol, residual < tol, std::move(detail)};
}

/// Check passes when residual <= tolerance; used for exact comparisons.
Check at_most(const std::string& suite, const std::string& name, double residual, double tol, std::string detail = "") {
  return {suite, name, residual, tol, residual <= tol, std::move(detail)};
}

template <typename T>
double max_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    if (std::isnan(static_cast<double>(a[i])) || std::isnan(static_cast<double>(b[i]))) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return m;
}

void randomise_bn(BatchNormState& bn, Rng& rng) {
  const auto c = bn.gamma.value.numel();
  bn.gamma.value = Tensor::uniform({c}, rng, 0.5, 1.5);
  bn.beta.value = Tensor::randn({c}, rng, 0.3);
  bn.running_mean = Tensor::randn({c}, rng, 0.3);
  bn.running_var = Tensor::uniform({c}, rng, 0.3, 2.0);
}

// ---------------------------------------------------------------------------

void tdc_suite(Report& r, const Options& o) {
  const std::string S = "tdc";
  Rng rng(o.seed + 101);
  std::uniform_int_distribution<int> cdist(1, 4), kpick(0, 2), coin(0, 1);
  const std::array<int, 3> kts{3, 5, 7};

  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    for (Variant v : {Variant::ShortTerm, Variant::MidTerm, Variant::LongTerm}) {
      const int kt = kts[static_cast<std::size_t>(kpick(rng))];
      const auto mode = coin(rng) ? TemporalMode::Valid : TemporalMode::CausalReplicate;
      const std::int64_t stride = 1 + coin(rng);
      auto p = tdc::BranchParams::random(v, kt, cdist(rng), cdist(rng), coin(rng) ? 3 : 1, rng);
      Tensor x = Tensor::randn({1 + coin(rng), p.c_in(), kt + 2, 7, 6}, rng);
      worst = std::max(worst, max_diff(tdc::tdc_forward_unified(x, p, mode, stride),
                                       tdc::tdc_forward_explicit(x, p, mode, stride)));
    }
  }
  r.checks.push_back(below(S, "unified_equals_explicit", worst, 1e-10, "50 instances x 3 variants"));

  worst = 0;
  for (int kt : kts)
    for (Variant v : {Variant::ShortTerm, Variant::MidTerm, Variant::LongTerm}) {
      auto p = tdc::BranchParams::random(v, kt, 2, 3, 3, rng);
      Tensor frame = Tensor::randn({1, 2, 1, 6, 6}, rng);
      Tensor x(Shape{1, 2, 7, 6, 6});
      for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t t = 0; t < 7; ++t)
          for (std::int64_t s = 0; s < 36; ++s) x[(c * 7 + t) * 36 + s] = frame[c * 36 + s];
      for (const Tensor& y : {tdc::tdc_forward_unified(x, p, TemporalMode::CausalReplicate),
                              tdc::tdc_forward_explicit(x, p, TemporalMode::CausalReplicate)})
        for (double q : y.storage()) worst = std::max(worst, std::abs(q));
    }
  r.checks.push_back(below(S, "constant_input_zero_response", worst, 1e-10, "all variants, Kt 3/5/7"));

  const std::array<std::int64_t, 3> chans{1, 4, 8};
  std::uniform_int_distribution<int> cpick(0, 2);
  double w64 = 0, w32 = 0, tap_sum = 0;
  for (int trial = 0; trial < 50; ++trial) {
    tdc::TdcrConfig cfg{chans[static_cast<std::size_t>(cpick(rng))], chans[static_cast<std::size_t>(cpick(rng))],
                        kts[static_cast<std::size_t>(kpick(rng))], 3, 1 + coin(rng), TemporalMode::CausalReplicate};
    tdc::TdcrModule m(cfg, rng);
    for (auto& b : m.branches()) randomise_bn(b.bn, rng);
    const auto fused = tdc::reparameterize(m);
    Tensor x = Tensor::randn({1, cfg.c_in, cfg.kt, 8, 8}, rng);
    w64 = std::max(w64, max_diff(tdc::fused_forward<double>(x, fused, cfg), tdc::tdcr_forward_infer<double>(x, m)));
    if (o.f32) {
      const TensorF xf = x.cast<float>();
      w32 = std::max(w32, max_diff(tdc::fused_forward<float>(xf, fused, cfg),
                                   tdc::tdcr_forward_infer<float>(xf, m)));
    }
    const Shape ws = fused.weight.shape();
    const std::int64_t kk = ws[3] * ws[4];
    for (std::int64_t oc = 0; oc < ws[0]; ++oc)
      for (std::int64_t ic = 0; ic < ws[1]; ++ic)
        for (std::int64_t s = 0; s < kk; ++s) {
          double sum = 0;
          for (std::int64_t t = 0; t < ws[2]; ++t) sum += fused.weight[((oc * ws[1] + ic) * ws[2] + t) * kk + s];
          tap_sum = std::max(tap_sum, std::abs(sum));
        }
  }
  r.checks.push_back(below(S, "reparam_equivalence_f64", w64, 1e-9, "50 random TDCR configurations"));
  if (o.f32) r.checks.push_back(below(S, "reparam_equivalence_f32", w32, 1e-4, "50 random TDCR configurations"));
  r.checks.push_back(below(S, "fused_tap_sum_zero", tap_sum, 1e-10));

  tdc::TdcrModule m({8, 8, 5, 3, 1, TemporalMode::CausalReplicate}, rng);
  const Shape in{1, 8, 5, 16, 16};
  const auto branched = metrics::count_params_flops(m.describe(in, "l"));
  m.set_fused(tdc::reparameterize(m));
  const auto fused = metrics::count_params_flops(m.describe(in, "l"));
  r.checks.push_back(below(S, "fused_params_ratio", static_cast<double>(fused.params) / static_cast<double>(branched.params),
                           1.0, std::to_string(branched.params) + " -> " + std::to_string(fused.params)));
  r.checks.push_back(below(S, "fused_flops_ratio", static_cast<double>(fused.flops) / static_cast<double>(branched.flops),
                           1.0, std::to_string(branched.flops) + " -> " + std::to_string(fused.flops)));
  const tdc::TdcrConfig c88{8, 8, 5, 3, 1, TemporalMode::CausalReplicate};
  r.checks.push_back(at_most(S, "param_count_example",
                             std::abs(static_cast<double>(tdc::branched_param_count(c88) - 6384)) +
                                 std::abs(static_cast<double>(tdc::fused_param_count(c88) - 2888)),
                             0.0, "8->8 channels, Kt 5: 6384 branched, 2888 fused"));
}

// ---------------------------------------------------------------------------

Tensor apply_linear(const LinearLayer& l, const Tensor& x) {
  Tape t;
  return ag::linear(t.constant(x), t.constant(l.weight.value),
                    l.bias ? std::optional<Var>(t.constant(l.bias->value)) : std::nullopt)
      .value();
}

void attention_suite(Report& r, const Options& o) {
  const std::string S = "attention";
  Rng rng(o.seed + 202);
  std::uniform_int_distribution<int> ext(1, 9), win(1, 4), coin(0, 1);
  double worst = 0;
  int shifted = 0, padded = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t t = ext(rng), h = ext(rng), w = ext(rng), p = win(rng), m = win(rng);
    const auto spec = coin(rng) ? attn::WindowSpec::shifted(p, m) : attn::WindowSpec::regular(p, m);
    Tensor x = Tensor::randn({t, 2, h, w}, rng);
    auto [tok, meta] = attn::window_partition(x, spec);
    shifted += spec.is_shifted();
    padded += meta.pad_t + meta.pad_h + meta.pad_w > 0;
    worst = std::max(worst, max_diff(attn::window_reverse(tok, meta), x));
  }
  r.checks.push_back(at_most(S, "partition_roundtrip_exact", worst, 0.0,
                             "100 shapes, " + std::to_string(shifted) + " shifted, " + std::to_string(padded) + " padded"));

  const auto meta = attn::make_window_meta(5, 6, 6, attn::WindowSpec::shifted(5, 4));
  const std::int64_t L = meta.tokens(), nw = meta.num_windows();
  Tensor q = Tensor::randn({2 * nw, L, 8}, rng, 3.0), k = Tensor::randn({2 * nw, L, 8}, rng, 3.0);
  Tensor table = Tensor::randn({attn::relative_table_rows(5, 4), 2}, rng);
  Tensor pw = attn::attention_weights(q, k, table, *attn::relative_index(5, 4), meta.mask.get(), 2);
  double row_err = 0;
  for (std::int64_t rrow = 0; rrow < pw.numel() / L; ++rrow) {
    double s = 0;
    for (std::int64_t b = 0; b < L; ++b) s += pw[rrow * L + b];
    row_err = std::max(row_err, std::abs(s - 1.0));
  }
  r.checks.push_back(below(S, "softmax_rows_stochastic", row_err, 1e-12, "shifted windows with mask"));

  {
    attn::AttentionParams a(4, 2, 1, 1, rng);
    Tensor x = Tensor::randn({3, 1, 4}, rng);
    Tape tape;
    Tensor y = attn::self_attention(tape.constant(x), a, nullptr).value();
    r.checks.push_back(below(S, "single_token_closed_form", max_diff(y, apply_linear(a.out, apply_linear(a.v, x))), 1e-12));
  }
  {
    attn::AttentionParams a(6, 3, 2, 2, rng);
    a.q.weight.value = Tensor(a.q.weight.value.shape());
    if (a.q.bias) a.q.bias->value = Tensor(a.q.bias->value.shape());
    a.bias_table.value = Tensor(a.bias_table.value.shape());
    Tensor x = Tensor::randn({2, 8, 6}, rng);
    Tape tape;
    Tensor y = attn::self_attention(tape.constant(x), a, nullptr).value();
    Tensor v = apply_linear(a.v, x);
    Tensor mean(Shape{2, 8, 6});
    for (std::int64_t g = 0; g < 2; ++g)
      for (std::int64_t c = 0; c < 6; ++c) {
        double s = 0;
        for (std::int64_t l = 0; l < 8; ++l) s += v[(g * 8 + l) * 6 + c];
        for (std::int64_t l = 0; l < 8; ++l) mean[(g * 8 + l) * 6 + c] = s / 8.0;
      }
    r.checks.push_back(below(S, "uniform_attention_closed_form", max_diff(y, apply_linear(a.out, mean)), 1e-12));
  }
}

// ---------------------------------------------------------------------------

void grads_suite(Report& r, const Options& o) {
  const std::string S = "grads";
  Rng rng(o.seed + 303);
  auto add = [&](const std::string& name, const GradCheckReport& rep) {
    r.checks.push_back(below(S, name, rep.max_rel_error, 1e-6,
                             std::to_string(rep.entries_checked) + " entries, worst " + rep.worst));
  };
  using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

  for (TemporalMode m : {TemporalMode::CausalReplicate, TemporalMode::Valid, TemporalMode::SameZero}) {
    add(std::string("conv3d_") + to_string(m),
        grad_check([m](Tape&, const std::vector<Var>& v) { return ag::sum(ag::conv3d(v[0], v[1], v[2], 2, 1, m)); },
                   {Tensor::randn({1, 2, 5, 4, 4}, rng), Tensor::randn({3, 2, 3, 3, 3}, rng), Tensor::randn({3}, rng)}));
  }
  {
    Tensor w = Tensor::randn({2, 3, 3, 3}, rng);
    add("conv2d", grad_check([&](Tape&, const std::vector<Var>& v) {
          return ag::weighted_sum(ag::conv2d(v[0], v[1], v[2], 2, 1), w);
        }, {Tensor::randn({2, 2, 5, 6}, rng), Tensor::randn({3, 2, 3, 3}, rng), Tensor::randn({3}, rng)}));
  }
  {
    BatchNormState bn(3);
    bn.gamma.value = Tensor::randn({3}, rng);
    bn.beta.value = Tensor::randn({3}, rng);
    bn.running_var = Tensor::uniform({3}, rng, 0.5, 2.0);
    Tensor x = Tensor::randn({2, 3, 2, 3}, rng), w = Tensor::randn({2, 3, 2, 3}, rng);
    for (BnMode mode : {BnMode::Train, BnMode::Infer}) {
      const std::string tag = mode == BnMode::Train ? "batch_norm_train" : "batch_norm_infer";
      add(tag + "_params", grad_check_params([&](Tape& t) {
            return ag::weighted_sum(ag::batch_norm(t.constant(x), bn, mode, false), w);
          }, {&bn.gamma, &bn.beta}));
      add(tag + "_input", grad_check([&](Tape&, const std::vector<Var>& v) {
            return ag::weighted_sum(ag::batch_norm(v[0], bn, mode, false), w);
          }, {x}));
    }
  }
  {
    Tensor y = Tensor::uniform({3, 5}, rng, 0.0, 1.0);
    add("softmax_bce", grad_check([&](Tape&, const std::vector<Var>& v) {
          return ag::bce_sum(ag::softmax_last(v[0]), y);
        }, {Tensor::randn({3, 5}, rng)}));
  }
  {
    const std::vector<std::vector<double>> coef{{-1, 0}, {1, -1}, {0, 1}};
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    for (std::int64_t i = 0; i < 40; ++i) idx->push_back(i % 7 == 3 ? -1 : (i * 5) % 108);
    Tensor w = Tensor::randn({40}, rng), w2 = Tensor::randn({2, 2, 3, 3}, rng);
    const Build b = [&](Tape&, const std::vector<Var>& v) {
      Var taps = ag::tap_combine({v[0], v[1]}, coef);
      Var x = ag::add_n({v[0], v[1], ag::scale(v[2], -0.5)});
      Var y = ag::add(ag::silu(ag::add_tiled(x, v[3])), v[2]);
      Var z = ag::gather(ag::reshape(taps, {108}), idx, {40});
      Var c = ag::narrow(ag::concat({y, x}, 1), 1, 1, 2);
      return ag::add(ag::weighted_sum(z, w), ag::weighted_sum(ag::silu(c), w2));
    };
    add("elementwise_and_indexing", grad_check(b, {Tensor::randn({2, 2, 3, 3}, rng), Tensor::randn({2, 2, 3, 3}, rng),
                                                   Tensor::randn({2, 2, 3, 3}, rng), Tensor::randn({3, 3}, rng)}));
  }
  {
    Tensor w = Tensor::randn({4, 3}, rng);
    add("layer_norm_linear", grad_check([&](Tape&, const std::vector<Var>& v) {
          return ag::weighted_sum(ag::linear(ag::layer_norm_last(v[0], v[1], v[2]), v[3], v[4]), w);
        }, {Tensor::randn({4, 6}, rng), Tensor::randn({6}, rng), Tensor::randn({6}, rng), Tensor::randn({3, 6}, rng),
            Tensor::randn({3}, rng)}));
  }
  {
    tdc::TdcrModule m({2, 3, 5, 3, 1, TemporalMode::CausalReplicate}, rng);
    std::vector<Parameter*> params;
    m.visit("m", {[&](const std::string&, Parameter& p) { params.push_back(&p); }, [](const std::string&, Tensor&) {}});
    Tensor x = Tensor::randn({2, 2, 5, 4, 4}, rng), w = Tensor::randn({2, 3, 5, 4, 4}, rng);
    add("tdcr_train_mode", grad_check_params([&](Tape& t) {
          return ag::weighted_sum(m.forward(t.constant(x), ForwardCtx{BnMode::Train, false}), w);
        }, params));
  }
  {
    const auto meta = attn::make_window_meta(2, 8, 8, attn::WindowSpec::shifted(2, 4));
    const std::int64_t G = 2 * meta.num_windows(), L = meta.tokens();
    Parameter q(Tensor::randn({G, L, 4}, rng)), k(Tensor::randn({G, L, 4}, rng)), v(Tensor::randn({G, L, 4}, rng));
    Parameter table(Tensor::randn({attn::relative_table_rows(2, 4), 2}, rng));
    Tensor w = Tensor::randn({G, L, 4}, rng);
    auto idx = attn::relative_index(2, 4);
    auto build = [&](Tape& t) {
      return ag::weighted_sum(attn::window_attention(t.param(q), t.param(k), t.param(v), t.param(table), idx, meta.mask, 2), w);
    };
    GradCheckOptions opts;
    opts.max_entries = 64;
    opts.selection = EntrySelection::Largest;
    add("window_attention", grad_check_params(build, {&q, &k, &v, &table}, opts));
    add("window_attention_directional", grad_check_directional(build, {&q, &k, &v, &table}));
  }
  {
    Tensor tdcf = Tensor::randn({1, 3, 3, 4, 4}, rng), stf = Tensor::randn({1, 2, 3, 4, 4}, rng),
           sf = Tensor::randn({1, 2, 4, 4}, rng);
    attn::TdcstaStage stage({3, 2, 2, 4, 2, 3, 2, attn::QueryStream::Tdcf}, rng);
    std::vector<Parameter*> params;
    stage.visit("s", {[&](const std::string&, Parameter& p) { params.push_back(&p); }, [](const std::string&, Tensor&) {}});
    Tensor w = Tensor::randn({1, 4, 3, 4, 4}, rng);
    auto build = [&](Tape& t) {
      return ag::weighted_sum(stage.forward(t.constant(tdcf), t.constant(stf), t.constant(sf)), w);
    };
    add("tdcsta_tensorwise", grad_check_tensorwise(build, params));
    add("tdcsta_directional", grad_check_directional(build, params));
  }
  {
    // Detection loss on raw maps of three levels.
    const std::vector<std::int64_t> strides{4, 8, 16};
    const std::vector<metrics::Box> boxes{{5.3, 6.1, 6.2, 5.7}, {17.4, 3.2, 11.0, 12.5}};
    std::vector<Tensor> raw;
    for (std::int64_t s : strides) raw.push_back(Tensor::randn({1, 5, 32 / s, 32 / s}, rng, 0.5));
    add("detection_loss", grad_check([&](Tape&, const std::vector<Var>& v) {
          return model::detection_loss(v, {boxes}, strides).total;
        }, raw));
  }
  {
    model::ModelConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.widths = {4, 8, 16, 32};
    cfg.neck_width = 8;
    cfg.heads = 2;
    cfg.window_m = 4;
    model::TdcNet net(cfg, o.seed + 7);
    std::vector<Parameter*> params;
    net.visit({[&](const std::string&, Parameter& p) { params.push_back(&p); }, [](const std::string&, Tensor&) {}});
    Tensor clip = Tensor::randn({2, 1, 5, 32, 32}, rng);
    Tensor frame(Shape{2, 1, 32, 32});
    for (std::int64_t n = 0; n < 2; ++n)
      std::copy_n(clip.ptr() + (n * 5 + 4) * 1024, 1024, frame.ptr() + n * 1024);
    const std::vector<std::vector<metrics::Box>> boxes{{{4.2, 9.5, 6.0, 6.5}}, {{20.1, 3.3, 7.4, 5.2}, {2.0, 18.0, 12.0, 10.0}}};
    const auto strides = cfg.strides();
    auto build = [&](Tape& t) {
      const ForwardCtx ctx{BnMode::Train, false};
      Var l = model::detection_loss(net.forward(t.constant(clip), ctx), boxes, strides).total;
      l = ag::add(l, model::detection_loss(net.forward_aux2d(t.constant(frame), ctx), boxes, strides).total);
      return ag::add(l, model::detection_loss(net.forward_aux3d(t.constant(clip), ctx), boxes, strides).total);
    };
    GradCheckOptions global;
    global.global_scale = true;
    add("tiny_model_tensorwise", grad_check_tensorwise(build, params, global));
    add("tiny_model_directional", grad_check_directional(build, params));
  }
}

// ---------------------------------------------------------------------------

void metrics_suite(Report& r, const Options& o) {
  const std::string S = "metrics";
  using metrics::Box;
  using metrics::FrameDetections;
  const Box gt{0, 0, 10, 10};
  const auto ap_fp_tp = metrics::ap50(metrics::match_detections({FrameDetections{{{{50, 50, 10, 10}, 0.9}, {gt, 0.8}}, {gt}}}));
  r.checks.push_back(at_most(S, "ap_fp_then_tp_is_half", std::abs(ap_fp_tp - 0.5), 0.0));
  const auto ap_tp_fp = metrics::ap50(metrics::match_detections({FrameDetections{{{gt, 0.9}, {{50, 50, 10, 10}, 0.8}}, {gt}}}));
  r.checks.push_back(at_most(S, "ap_tp_then_fp_is_one", std::abs(ap_tp_fp - 1.0), 0.0));
  r.checks.push_back(at_most(S, "iou_corner_one_seventh", std::abs(metrics::iou({0, 0, 2, 2}, {1, 1, 2, 2}) - 1.0 / 7.0), 0.0));
  const auto pr = metrics::prf1(metrics::match_detections({FrameDetections{{{gt, 0.9}, {gt, 0.8}}, {gt}}}), 0.0);
  r.checks.push_back(at_most(S, "f1_two_thirds",
                             std::abs(pr.precision - 0.5) + std::abs(pr.recall - 1.0) + std::abs(pr.f1 - 2.0 / 3.0), 0.0));

  Rng rng(o.seed + 404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<FrameDetections> frames(4);
    for (auto& f : frames) {
      for (int g = 0; g < 3; ++g) f.ground_truths.push_back({u(rng) * 80, u(rng) * 80, 8, 8});
      for (int d = 0; d < 5; ++d) {
        Box b = f.ground_truths[static_cast<std::size_t>(d % 3)];
        b.x += (u(rng) - 0.5) * 8;
        b.y += (u(rng) - 0.5) * 8;
        f.detections.push_back({b, u(rng)});
      }
    }
    const double base = metrics::ap50(metrics::match_detections(frames));
    for (auto& f : frames)
      for (auto& d : f.detections) d.confidence = std::exp(3 * d.confidence) * 0.1 + 2.0;
    worst = std::max(worst, std::abs(metrics::ap50(metrics::match_detections(frames)) - base));
  }
  r.checks.push_back(at_most(S, "ap_invariant_to_monotone_rescaling", worst, 0.0, "20 random match sets"));
}

}  // namespace

Report run(const std::string& suite, const Options& opts) {
  Report r;
  const bool all = suite == "all";
  bool known = all;
  auto want = [&](const std::string& s) {
    if (all || suite == s) {
      known = true;
      return true;
    }
    return false;
  };
  if (want("tdc")) tdc_suite(r, opts);
  if (want("attention")) attention_suite(r, opts);
  if (want("grads")) grads_suite(r, opts);
  if (want("metrics")) metrics_suite(r, opts);
  if (!known) throw UsageError("unknown verify suite '" + suite + "' (tdc, attention, grads, metrics, all)");
  return r;
}

}  // namespace tdcnet::verify
