// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tdcnet/autograd.hpp"
#include "tdcnet/errors.hpp"
#include "tdcnet/kernels.hpp"
#include "tdcnet/serialize.hpp"

using namespace tdcnet;

namespace {

std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

const char* oracle_mode(TemporalMode m) {
  switch (m) {
    case TemporalMode::CausalReplicate: return "causal";
    case TemporalMode::Valid: return "valid";
    case TemporalMode::SameZero: return "same";
  }
  return "";
}

}  // namespace

TEST_CASE("tensor rejects zero-sized dimensions and mismatched data") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), DimensionError);
  Tensor t(Shape{2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.dim(-1) == 4);
}

TEST_CASE("conv3d all-ones valid gives 45") {
  Tensor x = Tensor::ones({1, 1, 5, 3, 3});
  Tensor w = Tensor::ones({1, 1, 5, 3, 3});
  Tensor y = conv3d<double>(x, w, nullptr, 1, 0, TemporalMode::Valid);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1, 1});
  CHECK(y[0] == 45.0);
}

TEST_CASE("conv3d delta kernel is the identity under same_zero") {
  auto rng = make_rng(1);
  Tensor x = Tensor::randn({2, 1, 5, 6, 7}, rng);
  Tensor w(Shape{1, 1, 3, 3, 3});
  w.at({0, 0, 1, 1, 1}) = 1.0;
  Tensor y = conv3d<double>(x, w, nullptr, 1, 1, TemporalMode::SameZero);
  CHECK(y == x);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
  auto rng = make_rng(2);
  Tensor x = Tensor::randn({2, 3, 5, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 5, 3, 3}, rng);
  Tensor b = Tensor::randn({4}, rng);
  for (TemporalMode m : {TemporalMode::CausalReplicate, TemporalMode::Valid, TemporalMode::SameZero}) {
    Tensor y = conv3d<double>(x, w, &b, 1, 1, m);
    CHECK(max_abs_diff(y, oracle::conv3d(x, w, &b, 1, 1, oracle_mode(m))) < 1e-12);
  }
}

TEST_CASE("conv3d and conv2d agree with the oracle on 100 random shapes") {
  auto rng = make_rng(3);
  std::uniform_int_distribution<int> small(1, 3), spatial(3, 9), kt_pick(0, 2), k_pick(0, 1),
      stride_pick(1, 2), mode_pick(0, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = small(rng), ci = small(rng), co = small(rng);
    const std::int64_t kt = std::array<int, 3>{1, 3, 5}[kt_pick(rng)];
    const std::int64_t k = k_pick(rng) ? 3 : 1;
    const std::int64_t t = kt + small(rng) - 1, h = spatial(rng), w = spatial(rng);
    const std::int64_t stride = stride_pick(rng), pad = k / 2;
    const auto mode = static_cast<TemporalMode>(mode_pick(rng));
    Tensor x = Tensor::randn({n, ci, t, h, w}, rng);
    Tensor wt = Tensor::randn({co, ci, kt, k, k}, rng);
    Tensor b = Tensor::randn({co}, rng);
    worst = std::max(worst, max_abs_diff(conv3d<double>(x, wt, &b, stride, pad, mode),
                                         oracle::conv3d(x, wt, &b, stride, pad, oracle_mode(mode))));
    Tensor x2 = Tensor::randn({n, ci, h, w}, rng);
    Tensor w2 = Tensor::randn({co, ci, k, k}, rng);
    Tensor y2 = conv2d<double>(x2, w2, &b, stride, pad);
    Tensor ref = oracle::conv3d(x2.reshaped({n, ci, 1, h, w}), w2.reshaped({co, ci, 1, k, k}), &b,
                                stride, pad, "valid");
    worst = std::max(worst, max_abs_diff(y2, ref.reshaped(y2.shape())));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("conv3d is bilinear") {
  auto rng = make_rng(4);
  Tensor x = Tensor::randn({1, 2, 5, 6, 6}, rng);
  Tensor z = Tensor::randn({1, 2, 5, 6, 6}, rng);
  Tensor w = Tensor::randn({3, 2, 3, 3, 3}, rng);
  Tensor v = Tensor::randn({3, 2, 3, 3, 3}, rng);
  const double a = 0.7, b = -1.3;
  Tensor xz(x.shape()), wv(w.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) xz[i] = a * x[i] + b * z[i];
  for (std::int64_t i = 0; i < w.numel(); ++i) wv[i] = a * w[i] + b * v[i];
  const auto m = TemporalMode::CausalReplicate;
  Tensor lhs = conv3d<double>(xz, w, nullptr, 1, 1, m);
  Tensor cx = conv3d<double>(x, w, nullptr, 1, 1, m), cz = conv3d<double>(z, w, nullptr, 1, 1, m);
  Tensor lhs2 = conv3d<double>(x, wv, nullptr, 1, 1, m);
  Tensor cv = conv3d<double>(x, v, nullptr, 1, 1, m);
  double d1 = 0, d2 = 0;
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    d1 = std::max(d1, std::abs(lhs[i] - (a * cx[i] + b * cz[i])));
    d2 = std::max(d2, std::abs(lhs2[i] - (a * cx[i] + b * cv[i])));
  }
  CHECK(d1 < 1e-12);
  CHECK(d2 < 1e-12);
}

TEST_CASE("causal_replicate pads history with frame 0") {
  // Kt=3, weight picks the oldest tap: output t reads frame max(t-2, 0).
  Tensor x(Shape{1, 1, 4, 1, 1}, {10, 20, 30, 40});
  Tensor w(Shape{1, 1, 3, 1, 1}, {1, 0, 0});
  Tensor y = conv3d<double>(x, w, nullptr, 1, 0, TemporalMode::CausalReplicate);
  CHECK(y == Tensor(Shape{1, 1, 4, 1, 1}, {10, 10, 10, 20}));
}

TEST_CASE("conv3d errors name the offending axis") {
  Tensor x = Tensor::ones({1, 2, 5, 4, 4});
  try {
    conv3d<double>(x, Tensor::ones({1, 3, 3, 3, 3}), nullptr, 1, 1, TemporalMode::Valid);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
  CHECK_THROWS_AS(conv3d<double>(x, Tensor::ones({1, 2, 6, 3, 3}), nullptr, 1, 1, TemporalMode::Valid),
                  ConfigError);
  CHECK_THROWS_AS(conv3d<double>(x, Tensor::ones({1, 2, 3, 2, 3}), nullptr, 1, 1, TemporalMode::Valid),
                  DimensionError);
  CHECK_THROWS_AS(conv3d<double>(x, Tensor::ones({1, 2, 4, 3, 3}), nullptr, 1, 1, TemporalMode::SameZero),
                  ConfigError);
}

TEST_CASE("conv2d identity, all-ones and Kt=1 conv3d agreement") {
  auto rng = make_rng(5);
  Tensor x = Tensor::randn({2, 1, 5, 5}, rng);
  Tensor id(Shape{1, 1, 3, 3});
  id.at({0, 0, 1, 1}) = 1.0;
  CHECK(conv2d<double>(x, id, nullptr, 1, 1) == x);
  Tensor y = conv2d<double>(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), nullptr, 1, 0);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 9.0);
  Tensor xr = Tensor::randn({2, 3, 7, 6}, rng);
  Tensor wr = Tensor::randn({4, 3, 3, 3}, rng);
  Tensor b = Tensor::randn({4}, rng);
  Tensor y2 = conv2d<double>(xr, wr, &b, 2, 1);
  Tensor y3 = conv3d<double>(xr.reshaped({2, 3, 1, 7, 6}), wr.reshaped({4, 3, 1, 3, 3}), &b, 2, 1,
                             TemporalMode::Valid);
  CHECK(y2 == y3.reshaped(y2.shape()));
}

TEST_CASE("batch_norm infer: identity, constants, affinity and domain errors") {
  auto rng = make_rng(6);
  Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor one = Tensor::ones({3}), zero = Tensor::zeros({3});
  // var = 1 - eps makes sigma exactly 1.
  Tensor var(Shape{3}, 1.0 - kBnEps);
  Tensor y = batch_norm_infer<double>(x, one, zero, zero, var, kBnEps);
  CHECK(max_abs_diff(y, x) < 1e-15);

  Tensor gamma(Shape{3}, {2.0, -1.0, 0.5}), beta(Shape{3}, {0.1, 0.2, 0.3});
  Tensor mu(Shape{3}, {1.0, 2.0, 3.0}), v(Shape{3}, {4.0, 0.25, 1.0});
  Tensor c(Shape{1, 3, 2, 2});
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (int i = 0; i < 4; ++i) c[ch * 4 + i] = 5.0;
  Tensor yc = batch_norm_infer<double>(c, gamma, beta, mu, v, kBnEps);
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    const double expect = gamma[ch] * (5.0 - mu[ch]) / std::sqrt(v[ch] + kBnEps) + beta[ch];
    for (int i = 0; i < 4; ++i) CHECK(yc[ch * 4 + i] == doctest::Approx(expect).epsilon(1e-14));
  }

  // Identity-affine params: f(2x) - f(x) = x / sigma per channel.
  Tensor x2 = x;
  for (auto& e : x2.storage()) e *= 2;
  Tensor f1 = batch_norm_infer<double>(x, one, zero, mu, v, kBnEps);
  Tensor f2 = batch_norm_infer<double>(x2, one, zero, mu, v, kBnEps);
  double worst = 0.0;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ch = 0; ch < 3; ++ch)
      for (std::int64_t i = 0; i < 16; ++i) {
        const std::int64_t k = (n * 3 + ch) * 16 + i;
        worst = std::max(worst, std::abs(f2[k] - f1[k] - x[k] / std::sqrt(v[ch] + kBnEps)));
      }
  CHECK(worst < 1e-12);

  Tensor bad(Shape{3}, {1.0, -1.0, 1.0});
  CHECK_THROWS_AS(batch_norm_infer<double>(x, one, zero, zero, bad, kBnEps), NumericError);
  CHECK_THROWS_AS(batch_norm_infer<double>(x, Tensor::ones({2}), zero, zero, var, kBnEps), DimensionError);
}

TEST_CASE("batch_norm train normalises with batch statistics and updates running stats") {
  auto rng = make_rng(7);
  Tensor x = Tensor::randn({3, 2, 4, 5}, rng, 3.0);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += (i / 20) % 2 ? 4.0 : -2.0;
  BatchNormState bn(2);
  Tape tape;
  Tensor y = ag::batch_norm(tape.leaf(x), bn, BnMode::Train).value();
  const std::int64_t per = 3 * 20;
  for (std::int64_t ch = 0; ch < 2; ++ch) {
    double mean = 0, var = 0, xmean = 0, xvar = 0;
    for (std::int64_t n = 0; n < 3; ++n)
      for (std::int64_t i = 0; i < 20; ++i) {
        mean += y[(n * 2 + ch) * 20 + i];
        xmean += x[(n * 2 + ch) * 20 + i];
      }
    mean /= per;
    xmean /= per;
    for (std::int64_t n = 0; n < 3; ++n)
      for (std::int64_t i = 0; i < 20; ++i) {
        var += std::pow(y[(n * 2 + ch) * 20 + i] - mean, 2);
        xvar += std::pow(x[(n * 2 + ch) * 20 + i] - xmean, 2);
      }
    var /= per;
    CHECK(std::abs(mean) < 1e-10);
    // Normalised with eps, so the unit-variance check accounts for it.
    CHECK(std::abs(var - (xvar / per) / (xvar / per + kBnEps)) < 1e-10);
    CHECK(bn.running_mean[ch] == doctest::Approx(0.1 * xmean).epsilon(1e-12));
    CHECK(bn.running_var[ch] == doctest::Approx(0.9 + 0.1 * xvar / (per - 1)).epsilon(1e-12));
  }
}

TEST_CASE("softmax_last closed forms, row sums and shift invariance") {
  Tensor u = softmax_last<double>(Tensor(Shape{1, 4}, {3, 3, 3, 3}));
  for (int i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-15));
  Tensor p = softmax_last<double>(Tensor(Shape{2}, {0.0, std::log(3.0)}));
  CHECK(std::abs(p[0] - 0.25) < 1e-15);
  CHECK(std::abs(p[1] - 0.75) < 1e-15);
  auto rng = make_rng(8);
  Tensor x = Tensor::randn({6, 7, 9}, rng, 5.0);
  Tensor s = softmax_last<double>(x);
  Tensor xs = x;
  for (std::int64_t r = 0; r < 42; ++r)
    for (int c = 0; c < 9; ++c) xs[r * 9 + c] += 100.0 * (r % 5) - 37.0;
  Tensor ss = softmax_last<double>(xs);
  double row_err = 0;
  for (std::int64_t r = 0; r < 42; ++r) {
    double sum = 0;
    for (int c = 0; c < 9; ++c) sum += s[r * 9 + c];
    row_err = std::max(row_err, std::abs(sum - 1.0));
  }
  CHECK(row_err < 1e-12);
  CHECK(max_abs_diff(s, ss) < 1e-12);
}

TEST_CASE("linear: identity, zero weight, and scalar-loop oracle") {
  auto rng = make_rng(9);
  Tensor x = Tensor::randn({3, 2, 4}, rng);
  Tensor eye(Shape{4, 4});
  for (int i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  Tensor zb = Tensor::zeros({4});
  CHECK(linear<double>(x, eye, &zb) == x);
  Tensor b(Shape{5}, {1, 2, 3, 4, 5});
  Tensor y = linear<double>(x, Tensor::zeros({5, 4}), &b);
  for (std::int64_t r = 0; r < 6; ++r)
    for (int o = 0; o < 5; ++o) CHECK(y[r * 5 + o] == b[o]);
  Tensor w = Tensor::randn({5, 4}, rng);
  CHECK(max_abs_diff(linear<double>(x, w, &b), oracle::linear(x, w, b)) < 1e-12);
  CHECK_THROWS_AS(linear<double>(x, Tensor::zeros({5, 3}), &b), DimensionError);
}

TEST_CASE("grad_check: linear with sum loss has the analytic gradient") {
  auto rng = make_rng(10);
  Tensor x = Tensor::randn({3, 4}, rng);
  Parameter w(Tensor::randn({2, 4}, rng));
  Parameter b(Tensor::randn({2}, rng));
  Tape tape;
  Var loss = ag::sum(ag::linear(tape.constant(x), tape.param(w), tape.param(b)));
  tape.backward(loss);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      double expect = 0;
      for (int n = 0; n < 3; ++n) expect += x.at({n, j});
      CHECK(std::abs(w.grad.at({i, j}) - expect) < 1e-12);
    }
  const auto rep = grad_check_params(
      [&](Tape& t) { return ag::sum(ag::linear(t.constant(x), t.param(w), t.param(b))); }, {&w, &b});
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("grad_check: conv3d with sum loss") {
  auto rng = make_rng(11);
  std::vector<Tensor> in{Tensor::randn({1, 2, 5, 4, 4}, rng), Tensor::randn({3, 2, 3, 3, 3}, rng),
                         Tensor::randn({3}, rng)};
  for (TemporalMode m : {TemporalMode::CausalReplicate, TemporalMode::Valid, TemporalMode::SameZero}) {
    const auto rep = grad_check(
        [m](Tape&, const std::vector<Var>& v) { return ag::sum(ag::conv3d(v[0], v[1], v[2], 2, 1, m)); },
        in);
    CHECK(rep.max_rel_error < 1e-6);
  }
}

TEST_CASE("grad_check: softmax followed by BCE") {
  auto rng = make_rng(12);
  Tensor y = Tensor::uniform({3, 5}, rng, 0.0, 1.0);
  Tensor x = Tensor::randn({3, 5}, rng);
  Tape probe;
  const double loss = ag::bce_sum(ag::softmax_last(probe.leaf(x)), y).value()[0];
  Tensor p = softmax_last<double>(x);
  double expect = 0;
  for (std::int64_t i = 0; i < 15; ++i) expect += oracle::bce(p[i], y[i]);
  CHECK(std::abs(loss - expect) < 1e-12);
  const auto rep = grad_check(
      [&](Tape&, const std::vector<Var>& v) { return ag::bce_sum(ag::softmax_last(v[0]), y); }, {x});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: every remaining op") {
  auto rng = make_rng(13);
  GradCheckOptions opts;
  SUBCASE("conv2d") {
    std::vector<Tensor> in{Tensor::randn({2, 2, 5, 6}, rng), Tensor::randn({3, 2, 3, 3}, rng),
                           Tensor::randn({3}, rng)};
    Tensor w = Tensor::randn({2, 3, 3, 3}, rng);
    auto rep = grad_check([&](Tape&, const std::vector<Var>& v) {
      return ag::weighted_sum(ag::conv2d(v[0], v[1], v[2], 2, 1), w);
    }, in, opts);
    CHECK(rep.max_rel_error < 1e-6);
  }
  SUBCASE("batch_norm train and infer") {
    BatchNormState bn(3);
    bn.gamma.value = Tensor::randn({3}, rng);
    bn.beta.value = Tensor::randn({3}, rng);
    bn.running_var = Tensor::uniform({3}, rng, 0.5, 2.0);
    Tensor x = Tensor::randn({2, 3, 2, 3}, rng);
    Tensor w = Tensor::randn({2, 3, 2, 3}, rng);
    for (BnMode mode : {BnMode::Train, BnMode::Infer}) {
      auto rep = grad_check_params(
          [&](Tape& t) { return ag::weighted_sum(ag::batch_norm(t.constant(x), bn, mode, false), w); },
          {&bn.gamma, &bn.beta});
      CHECK(rep.max_rel_error < 1e-6);
      auto rep2 = grad_check(
          [&](Tape&, const std::vector<Var>& v) { return ag::weighted_sum(ag::batch_norm(v[0], bn, mode, false), w); },
          {x});
      CHECK(rep2.max_rel_error < 1e-6);
    }
  }
  SUBCASE("tap_combine, add, add_n, add_tiled, scale, silu, reshape, gather") {
    std::vector<Tensor> in{Tensor::randn({2, 2, 3, 3}, rng), Tensor::randn({2, 2, 3, 3}, rng),
                           Tensor::randn({2, 2, 3, 3}, rng), Tensor::randn({3, 3}, rng)};
    const std::vector<std::vector<double>> coef{{-1, 0}, {1, -1}, {0, 1}};
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    for (std::int64_t i = 0; i < 40; ++i) idx->push_back(i % 7 == 3 ? -1 : (i * 5) % 108);
    Tensor w = Tensor::randn({40}, rng);
    Tensor w2 = Tensor::randn({2, 2, 3, 3}, rng);
    auto rep = grad_check([&](Tape&, const std::vector<Var>& v) {
      Var taps = ag::tap_combine({v[0], v[1]}, coef);  // [2, 2, 3, 3, 3]
      Var x = ag::add_n({v[0], v[1], ag::scale(v[2], -0.5)});
      Var y = ag::add(ag::silu(ag::add_tiled(x, v[3])), v[2]);
      Var z = ag::gather(ag::reshape(taps, {108}), idx, {40});
      return ag::add(ag::weighted_sum(z, w), ag::weighted_sum(ag::silu(y), w2));
    }, in, opts);
    CHECK(rep.max_rel_error < 1e-6);
  }
  SUBCASE("concat and narrow") {
    std::vector<Tensor> in{Tensor::randn({2, 3, 4}, rng), Tensor::randn({2, 1, 4}, rng)};
    Tensor w = Tensor::randn({2, 2, 4}, rng);
    auto rep = grad_check([&](Tape&, const std::vector<Var>& v) {
      Var c = ag::concat({v[0], v[1], v[0]}, 1);  // [2, 7, 4]
      return ag::weighted_sum(ag::narrow(c, 1, 2, 2), w);
    }, in, opts);
    CHECK(rep.max_rel_error < 1e-6);
  }
  SUBCASE("layer_norm and linear") {
    std::vector<Tensor> in{Tensor::randn({4, 6}, rng), Tensor::randn({6}, rng), Tensor::randn({6}, rng),
                           Tensor::randn({3, 6}, rng), Tensor::randn({3}, rng)};
    Tensor w = Tensor::randn({4, 3}, rng);
    auto rep = grad_check([&](Tape&, const std::vector<Var>& v) {
      return ag::weighted_sum(ag::linear(ag::layer_norm_last(v[0], v[1], v[2]), v[3], v[4]), w);
    }, in, opts);
    CHECK(rep.max_rel_error < 1e-6);
  }
}

TEST_CASE("concat and narrow move blocks along one axis") {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  Var b = tape.leaf(Tensor(Shape{2, 1}, {5, 6}));
  Var c = ag::concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.value().storage() == std::vector<double>{1, 2, 5, 3, 4, 6});
  Var r = ag::concat({a, a}, 0);
  CHECK(r.value().storage() == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
  Var n = ag::narrow(c, 1, 1, 2);
  CHECK(n.value().storage() == std::vector<double>{2, 5, 4, 6});
  CHECK_THROWS_AS(ag::narrow(c, 1, 2, 2), DimensionError);
  CHECK_THROWS_AS(ag::concat({a, tape.leaf(Tensor(Shape{3, 1}))}, 1), DimensionError);
  CHECK_THROWS_AS(ag::concat({a}, 2), DimensionError);
}

TEST_CASE("backward visits every node once in reverse order and rejects non-scalar roots") {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2}, {1.0, 2.0}));
  Var b = ag::silu(a);
  Var c = ag::add(b, a);
  Var d = ag::sum(ag::add(c, b));
  CHECK_THROWS_AS(tape.backward(c), UsageError);
  tape.backward(d);
  const auto& order = tape.last_visit_order();
  std::set<int> seen(order.begin(), order.end());
  CHECK(seen.size() == order.size());
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  REQUIRE(tape.grad(a) != nullptr);
  CHECK(tape.grad(a)->shape() == a.shape());
}

TEST_CASE("tensor archive roundtrip with both precisions") {
  auto rng = make_rng(14);
  TensorArchive ar;
  ar.metadata["note"] = "x";
  Tensor a = Tensor::randn({2, 3}, rng);
  TensorF b = Tensor::randn({4}, rng).cast<float>();
  ar.add("a", a);
  ar.add("b", b);
  const auto path = std::filesystem::temp_directory_path() / "tdcnet_archive_test.bin";
  ar.save(path);
  TensorArchive back = TensorArchive::load(path);
  CHECK(back.metadata["note"] == "x");
  CHECK(back.get("a") == a);
  CHECK(std::get<TensorF>(back.entries()[1].value) == b);
  std::filesystem::remove(path);
}
