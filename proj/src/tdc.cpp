// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/tdc.hpp"

#include <atomic>
#include <cmath>

namespace tdcnet::tdc {

namespace {

std::atomic<bool> g_flip_short_term{false};

struct DifferenceTerm {
  std::int64_t newer;  // 0-based frame position inside the temporal window
  std::int64_t older;
};

// The sum-of-differences form, one term per base kernel in base order.
std::vector<DifferenceTerm> difference_terms(Variant v, std::int64_t kt) {
  std::vector<DifferenceTerm> terms;
  switch (v) {
    case Variant::LongTerm:
      for (std::int64_t t = 1; t <= kt - 1; ++t) terms.push_back({kt - 1, t - 1});
      break;
    case Variant::ShortTerm:
      for (std::int64_t t = 2; t <= kt; ++t) terms.push_back({t - 1, t - 2});
      break;
    case Variant::MidTerm:
      for (std::int64_t t = 3; t <= kt; ++t) terms.push_back({t - 1, t - 3});
      break;
  }
  return terms;
}

// Direct 2D cross-correlation of one plane with one kernel, accumulated into out.
void accumulate_conv2d(const double* plane, std::int64_t h, std::int64_t w, const double* kernel,
                       std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                       double* out, std::int64_t ho_n, std::int64_t wo_n) {
  for (std::int64_t ho = 0; ho < ho_n; ++ho)
    for (std::int64_t wo = 0; wo < wo_n; ++wo) {
      double acc = 0.0;
      for (std::int64_t a = 0; a < kh; ++a) {
        const std::int64_t hi = ho * stride - pad + a;
        if (hi < 0 || hi >= h) continue;
        for (std::int64_t b = 0; b < kw; ++b) {
          const std::int64_t wi = wo * stride - pad + b;
          if (wi < 0 || wi >= w) continue;
          acc += plane[hi * w + wi] * kernel[a * kw + b];
        }
      }
      out[ho * wo_n + wo] += acc;
    }
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::ShortTerm: return "short";
    case Variant::MidTerm: return "mid";
    case Variant::LongTerm: return "long";
  }
  return "?";
}

void check_temporal_kernel(std::int64_t kt) {
  if (kt != 3 && kt != 5 && kt != 7) {
    throw ConfigError("temporal kernel size must be 3, 5 or 7, got " + std::to_string(kt));
  }
}

std::int64_t base_count(Variant v, std::int64_t kt) {
  check_temporal_kernel(kt);
  return v == Variant::MidTerm ? kt - 2 : kt - 1;
}

std::vector<std::vector<double>> tap_coefficients(Variant v, std::int64_t kt) {
  const std::int64_t nb = base_count(v, kt);
  std::vector<std::vector<double>> c(static_cast<std::size_t>(kt),
                                     std::vector<double>(static_cast<std::size_t>(nb), 0.0));
  // Frames are 1-based below; base b of the variant is W_{first + b}.
  auto set = [&](std::int64_t frame, std::int64_t base_index, double value) {
    c[static_cast<std::size_t>(frame - 1)][static_cast<std::size_t>(base_index)] += value;
  };
  switch (v) {
    case Variant::LongTerm:  // [-W1, ..., -W_{K-1}, W1 + ... + W_{K-1}]
      for (std::int64_t j = 1; j <= kt - 1; ++j) {
        set(j, j - 1, -1.0);
        set(kt, j - 1, 1.0);
      }
      break;
    case Variant::ShortTerm:  // [-W2, W2-W3, ..., W_{K-1}-W_K, W_K], bases W2..W_K
      for (std::int64_t j = 1; j <= kt; ++j) {
        if (j >= 2) set(j, j - 2, 1.0);
        if (j + 1 <= kt) set(j, j - 1, -1.0);
      }
      if (g_flip_short_term.load()) {
        for (auto& x : c[1]) x = -x;
      }
      break;
    case Variant::MidTerm:  // tap j = W_j (j >= 3) - W_{j+2} (j+2 <= K), bases W3..W_K
      for (std::int64_t j = 1; j <= kt; ++j) {
        if (j >= 3) set(j, j - 3, 1.0);
        if (j + 2 <= kt) set(j, j - 1, -1.0);
      }
      break;
  }
  return c;
}

BranchParams::BranchParams(Variant v, std::int64_t kt_, std::vector<Tensor> base_weights)
    : variant(v), kt(kt_) {
  for (auto& w : base_weights) bases.emplace_back(std::move(w));
  if (!bases.empty()) bn = BatchNormState(bases.front().value.dim(0));
  validate();
}

BranchParams BranchParams::random(Variant v, std::int64_t kt, std::int64_t c_in,
                                  std::int64_t c_out, std::int64_t k, Rng& rng) {
  std::vector<Tensor> ws;
  for (std::int64_t b = 0; b < base_count(v, kt); ++b) {
    ws.push_back(fan_in_uniform({c_out, c_in, k, k}, c_in * k * k, rng));
  }
  return BranchParams(v, kt, std::move(ws));
}

void BranchParams::validate() const {
  const std::int64_t want = base_count(variant, kt);
  if (static_cast<std::int64_t>(bases.size()) != want) {
    throw ConfigError(std::string(to_string(variant)) + "-term TDC needs " + std::to_string(want) +
                      " base kernels for Kt=" + std::to_string(kt) + ", got " +
                      std::to_string(bases.size()));
  }
  const Shape& s = bases.front().value.shape();
  if (s.size() != 4) throw DimensionError("TDC base kernel must be [C_out,C_in,Kh,Kw]");
  for (const auto& b : bases) {
    if (b.value.shape() != s) throw DimensionError("TDC base kernels must share one shape");
  }
  if (bn.gamma.value.numel() != s[0]) throw DimensionError("TDC branch BN width != C_out");
}

Tensor build_tdc_taps(const BranchParams& params) {
  params.validate();
  const auto coef = tap_coefficients(params.variant, params.kt);
  const Shape& s = params.bases.front().value.shape();
  const std::int64_t sp = s[2] * s[3];
  const std::int64_t kt = params.kt;
  Tensor out(Shape{s[0], s[1], kt, s[2], s[3]});
  for (std::int64_t oc = 0; oc < s[0] * s[1]; ++oc)
    for (std::int64_t tap = 0; tap < kt; ++tap) {
      double* dst = out.ptr() + (oc * kt + tap) * sp;
      for (std::size_t b = 0; b < params.bases.size(); ++b) {
        const double cf = coef[static_cast<std::size_t>(tap)][b];
        if (cf == 0.0) continue;
        const double* src = params.bases[b].value.ptr() + oc * sp;
        for (std::int64_t i = 0; i < sp; ++i) dst[i] += cf * src[i];
      }
    }
  return out;
}

Var build_tdc_taps(Var like, BranchParams& params) {
  params.validate();
  std::vector<Var> bases;
  for (auto& b : params.bases) bases.push_back(use(like, b));
  return ag::tap_combine(bases, tap_coefficients(params.variant, params.kt));
}

Tensor tdc_forward_unified(const Tensor& input, const BranchParams& params, TemporalMode mode,
                           std::int64_t stride) {
  const Tensor taps = build_tdc_taps(params);
  return conv3d(input, taps, nullptr, stride, (taps.dim(3) - 1) / 2, mode);
}

Tensor tdc_forward_explicit(const Tensor& input, const BranchParams& params, TemporalMode mode,
                            std::int64_t stride) {
  params.validate();
  const Shape& ks = params.bases.front().value.shape();
  const std::int64_t kt = params.kt;
  // Geometry only; the weight shape stands in for the equivalent 3D kernel.
  const auto g = Conv3dGeometry::make(input.shape(), {ks[0], ks[1], kt, ks[2], ks[3]}, stride,
                                      (ks[2] - 1) / 2, mode);
  const auto terms = difference_terms(params.variant, kt);
  Tensor out(g.output_shape());
  const std::int64_t plane = g.h * g.w;
  const std::int64_t out_plane = g.h_out * g.w_out;
  std::vector<double> diff(static_cast<std::size_t>(plane));
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t to = 0; to < g.t_out; ++to)
      for (std::size_t b = 0; b < terms.size(); ++b) {
        const std::int64_t f_new = g.source_frame(to, terms[b].newer);
        const std::int64_t f_old = g.source_frame(to, terms[b].older);
        const Tensor& wb = params.bases[b].value;
        for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
          const double* base = input.ptr() + (n * g.c_in + ci) * g.t * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double a = f_new < 0 ? 0.0 : base[f_new * plane + i];
            const double c = f_old < 0 ? 0.0 : base[f_old * plane + i];
            diff[static_cast<std::size_t>(i)] = a - c;
          }
          for (std::int64_t co = 0; co < g.c_out; ++co) {
            double* dst = out.ptr() + ((n * g.c_out + co) * g.t_out + to) * out_plane;
            accumulate_conv2d(diff.data(), g.h, g.w, wb.ptr() + (co * g.c_in + ci) * g.kh * g.kw,
                              g.kh, g.kw, stride, g.pad, dst, g.h_out, g.w_out);
          }
        }
      }
  return out;
}

FusedConv3d fuse_conv_bn(const Tensor& weight, const Tensor* bias, const BatchNormState& bn,
                         double eps) {
  const std::int64_t c_out = weight.dim(0);
  if (bn.gamma.value.numel() != c_out) throw DimensionError("fuse_conv_bn: BN width != C_out");
  if (bias && bias->numel() != c_out) throw DimensionError("fuse_conv_bn: bias width != C_out");
  FusedConv3d f{weight, Tensor(Shape{c_out})};
  const std::int64_t per = weight.numel() / c_out;
  for (std::int64_t co = 0; co < c_out; ++co) {
    const double var = bn.running_var[co] + eps;
    if (!(var > 0.0)) throw NumericError("fuse_conv_bn: sigma is not positive on channel " + std::to_string(co));
    const double sigma = std::sqrt(var);
    const double s = bn.gamma.value[co] / sigma;
    for (std::int64_t i = 0; i < per; ++i) f.weight[co * per + i] *= s;
    const double b = bias ? (*bias)[co] : 0.0;
    f.bias[co] = s * (b - bn.running_mean[co]) + bn.beta.value[co];
  }
  return f;
}

TdcrModule::TdcrModule(const TdcrConfig& cfg, Rng& rng) : cfg_(cfg) {
  check_temporal_kernel(cfg.kt);
  const std::array<Variant, 3> order{Variant::ShortTerm, Variant::MidTerm, Variant::LongTerm};
  for (std::size_t i = 0; i < 3; ++i) {
    branches_[i] = BranchParams::random(order[i], cfg.kt, cfg.c_in, cfg.c_out, cfg.k, rng);
  }
}

TdcrModule::TdcrModule(const TdcrConfig& cfg, std::array<BranchParams, 3> branches)
    : cfg_(cfg), branches_(std::move(branches)) {
  bool seen[3] = {false, false, false};
  for (const auto& b : branches_) {
    b.validate();
    auto& flag = seen[static_cast<int>(b.variant)];
    if (flag) throw ConfigError("TDCR module needs exactly one branch per variant");
    flag = true;
    if (b.kt != cfg.kt || b.c_in() != cfg.c_in || b.c_out() != cfg.c_out) {
      throw DimensionError("TDCR branch shape does not match module config");
    }
  }
}

BranchParams& TdcrModule::branch(Variant v) {
  for (auto& b : branches_)
    if (b.variant == v) return b;
  throw ConfigError("TDCR module has no branch of the requested variant");
}

const BranchParams& TdcrModule::branch(Variant v) const {
  for (const auto& b : branches_)
    if (b.variant == v) return b;
  throw ConfigError("TDCR module has no branch of the requested variant");
}

void TdcrModule::set_fused(FusedConv3d f) {
  const Shape want{cfg_.c_out, cfg_.c_in, cfg_.kt, cfg_.k, cfg_.k};
  if (f.weight.shape() != want) {
    throw DimensionError("fused weight " + shape_str(f.weight.shape()) + " != " + shape_str(want));
  }
  fused_weight_ = Parameter(f.weight);
  fused_bias_ = Parameter(f.bias);
  fused_ = std::move(f);
}

Var TdcrModule::branch_forward(Var x, Variant v) {
  Var taps = build_tdc_taps(x, branch(v));
  return ag::conv3d(x, taps, std::nullopt, cfg_.stride, (cfg_.k - 1) / 2, cfg_.mode);
}

Var TdcrModule::forward(Var x, const ForwardCtx& ctx) {
  if (fused_) {
    return ag::conv3d(x, use(x, *fused_weight_), use(x, *fused_bias_), cfg_.stride,
                      (cfg_.k - 1) / 2, cfg_.mode);
  }
  // One convolution over the stacked branch kernels, split per branch for BN.
  std::vector<Var> taps;
  for (auto& b : branches_) taps.push_back(build_tdc_taps(x, b));
  Var y = ag::conv3d(x, ag::concat(taps, 0), std::nullopt, cfg_.stride, (cfg_.k - 1) / 2, cfg_.mode);
  std::vector<Var> outs;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    Var yi = ag::narrow(y, 1, static_cast<std::int64_t>(i) * cfg_.c_out, cfg_.c_out);
    outs.push_back(ag::batch_norm(yi, branches_[i].bn, ctx.bn_mode, ctx.update_stats, ctx.momentum));
  }
  return ag::add_n(outs);
}

void TdcrModule::visit(const std::string& prefix, const StateVisitor& v) {
  if (fused_) {
    v.param(prefix + ".fused.weight", *fused_weight_);
    v.param(prefix + ".fused.bias", *fused_bias_);
    // Keep the plain copy in sync after a load.
    fused_->weight = fused_weight_->value;
    fused_->bias = fused_bias_->value;
    return;
  }
  for (auto& b : branches_) {
    const std::string p = prefix + "." + to_string(b.variant);
    for (std::size_t i = 0; i < b.bases.size(); ++i) v.param(p + ".base" + std::to_string(i), b.bases[i]);
    v.param(p + ".bn.gamma", b.bn.gamma);
    v.param(p + ".bn.beta", b.bn.beta);
    v.buffer(p + ".bn.running_mean", b.bn.running_mean);
    v.buffer(p + ".bn.running_var", b.bn.running_var);
  }
}

metrics::LayerDesc TdcrModule::describe(const Shape& input, const std::string& name) const {
  metrics::LayerDesc d;
  d.name = name;
  d.input = input;
  d.weight = {cfg_.c_out, cfg_.c_in, cfg_.kt, cfg_.k, cfg_.k};
  d.stride = cfg_.stride;
  d.pad = (cfg_.k - 1) / 2;
  d.temporal_mode = tdcnet::to_string(cfg_.mode);
  d.kt = cfg_.kt;
  if (fused_) {
    d.type = "conv3d";
    d.bias = true;
  } else {
    d.type = "tdcr_branched";
    d.base_params = branched_param_count(cfg_) - 3 * 2 * cfg_.c_out;
  }
  return d;
}

Tensor tdcr_forward(const Tensor& input, TdcrModule& module, BnMode mode) {
  Tape tape;
  Var x = tape.constant(input);
  return module.forward(x, {mode, true}).value();
}

template <typename T>
BasicTensor<T> tdcr_forward_infer(const BasicTensor<T>& input, const TdcrModule& module) {
  const auto& cfg = module.config();
  std::optional<BasicTensor<T>> sum;
  for (const auto* b : {&module.branch(Variant::ShortTerm), &module.branch(Variant::MidTerm),
                        &module.branch(Variant::LongTerm)}) {
    const BasicTensor<T> taps = build_tdc_taps(*b).template cast<T>();
    auto y = conv3d(input, taps, nullptr, cfg.stride, (cfg.k - 1) / 2, cfg.mode);
    y = batch_norm_infer(y, b->bn.gamma.value.template cast<T>(), b->bn.beta.value.template cast<T>(),
                         b->bn.running_mean.template cast<T>(), b->bn.running_var.template cast<T>(), kBnEps);
    if (!sum) {
      sum = std::move(y);
    } else {
      for (std::int64_t i = 0; i < y.numel(); ++i) (*sum)[i] += y[i];
    }
  }
  return *sum;
}

template <typename T>
BasicTensor<T> fused_forward(const BasicTensor<T>& input, const FusedConv3d& fused,
                             const TdcrConfig& cfg) {
  const auto w = fused.weight.template cast<T>();
  const auto b = fused.bias.template cast<T>();
  return conv3d(input, w, &b, cfg.stride, (cfg.k - 1) / 2, cfg.mode);
}

template BasicTensor<double> tdcr_forward_infer(const BasicTensor<double>&, const TdcrModule&);
template BasicTensor<float> tdcr_forward_infer(const BasicTensor<float>&, const TdcrModule&);
template BasicTensor<double> fused_forward(const BasicTensor<double>&, const FusedConv3d&, const TdcrConfig&);
template BasicTensor<float> fused_forward(const BasicTensor<float>&, const FusedConv3d&, const TdcrConfig&);

FusedConv3d reparameterize(const TdcrModule& module) {
  if (module.is_fused()) return module.fused();
  const auto& cfg = module.config();
  FusedConv3d total{Tensor(Shape{cfg.c_out, cfg.c_in, cfg.kt, cfg.k, cfg.k}), Tensor(Shape{cfg.c_out})};
  for (const auto& b : module.branches()) {
    const FusedConv3d f = fuse_conv_bn(build_tdc_taps(b), nullptr, b.bn);
    for (std::int64_t i = 0; i < f.weight.numel(); ++i) total.weight[i] += f.weight[i];
    for (std::int64_t i = 0; i < f.bias.numel(); ++i) total.bias[i] += f.bias[i];
  }
  return total;
}

std::int64_t branched_param_count(const TdcrConfig& cfg) {
  std::int64_t bases = 0;
  for (auto v : {Variant::ShortTerm, Variant::MidTerm, Variant::LongTerm}) bases += base_count(v, cfg.kt);
  return bases * cfg.c_out * cfg.c_in * cfg.k * cfg.k + 3 * 2 * cfg.c_out;
}

std::int64_t fused_param_count(const TdcrConfig& cfg) {
  return cfg.c_out * cfg.c_in * cfg.kt * cfg.k * cfg.k + cfg.c_out;
}

namespace testing {
void set_short_term_sign_flip(bool enabled) { g_flip_short_term.store(enabled); }
bool short_term_sign_flip() { return g_flip_short_term.load(); }
}  // namespace testing

}  // namespace tdcnet::tdc
