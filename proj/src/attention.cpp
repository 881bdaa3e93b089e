// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/attention.hpp"

#include <algorithm>
#include <cmath>

namespace tdcnet::attn {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

void check_spec(const WindowSpec& s) {
  if (s.p < 1 || s.m < 1) throw ConfigError("window sizes must be >= 1");
  if (s.shift_t != 0 && s.shift_t != s.p / 2) throw ConfigError("temporal shift must be 0 or P/2");
  if (s.shift_s != 0 && s.shift_s != s.m / 2) throw ConfigError("spatial shift must be 0 or M/2");
}

}  // namespace

WindowMeta make_window_meta(std::int64_t t, std::int64_t h, std::int64_t w, const WindowSpec& spec) {
  check_spec(spec);
  WindowMeta meta;
  meta.spec = spec;
  meta.t = t;
  meta.h = h;
  meta.w = w;
  meta.windows_t = ceil_div(t, spec.p);
  meta.windows_h = ceil_div(h, spec.m);
  meta.windows_w = ceil_div(w, spec.m);
  meta.pad_t = meta.windows_t * spec.p - t;
  meta.pad_h = meta.windows_h * spec.m - h;
  meta.pad_w = meta.windows_w * spec.m - w;
  const std::int64_t tp = t + meta.pad_t, hp = h + meta.pad_h, wp = w + meta.pad_w;
  const std::int64_t L = spec.tokens();
  const std::int64_t nw = meta.num_windows();

  auto source = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(nw * L));
  std::vector<int> region(static_cast<std::size_t>(nw * L));
  bool any_mask = false;
  for (std::int64_t wt = 0; wt < meta.windows_t; ++wt)
    for (std::int64_t wh = 0; wh < meta.windows_h; ++wh)
      for (std::int64_t ww = 0; ww < meta.windows_w; ++ww) {
        const std::int64_t win = (wt * meta.windows_h + wh) * meta.windows_w + ww;
        for (std::int64_t l = 0; l < L; ++l) {
          // Position on the rolled grid, then back to the padded grid.
          const std::int64_t st = wt * spec.p + l / (spec.m * spec.m);
          const std::int64_t sh = wh * spec.m + (l / spec.m) % spec.m;
          const std::int64_t sw = ww * spec.m + l % spec.m;
          const std::int64_t pt = (st + spec.shift_t) % tp;
          const std::int64_t ph = (sh + spec.shift_s) % hp;
          const std::int64_t pw = (sw + spec.shift_s) % wp;
          const bool pad = pt >= t || ph >= h || pw >= w;
          const std::size_t slot = static_cast<std::size_t>(win * L + l);
          (*source)[slot] = pad ? -1 : (pt * h + ph) * w + pw;
          region[slot] = (st + spec.shift_t >= tp ? 4 : 0) + (sh + spec.shift_s >= hp ? 2 : 0) +
                         (sw + spec.shift_s >= wp ? 1 : 0);
          any_mask = any_mask || pad || region[slot] != 0;
        }
      }
  meta.source = source;
  if (any_mask) {
    auto mask = std::make_shared<Tensor>(Shape{nw, L, L});
    for (std::int64_t win = 0; win < nw; ++win)
      for (std::int64_t a = 0; a < L; ++a)
        for (std::int64_t b = 0; b < L; ++b) {
          if (a == b) continue;
          const std::size_t sa = static_cast<std::size_t>(win * L + a);
          const std::size_t sb = static_cast<std::size_t>(win * L + b);
          if ((*source)[sb] < 0 || region[sa] != region[sb]) {
            (*mask)[(win * L + a) * L + b] = kMaskedScore;
          }
        }
    meta.mask = mask;
  }
  return meta;
}

std::pair<Tensor, WindowMeta> window_partition(const Tensor& x, const WindowSpec& spec) {
  if (x.rank() != 4) throw DimensionError("window_partition expects [T,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  WindowMeta meta = make_window_meta(t, h, w, spec);
  const std::int64_t L = meta.tokens();
  Tensor tokens(Shape{meta.num_windows(), L, c});
  const auto& src = *meta.source;
  for (std::size_t slot = 0; slot < src.size(); ++slot) {
    if (src[slot] < 0) continue;
    const std::int64_t cell = src[slot];
    const std::int64_t tt = cell / (h * w), hw = cell % (h * w);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      tokens[static_cast<std::int64_t>(slot) * c + ch] = x[(tt * c + ch) * h * w + hw];
    }
  }
  return {std::move(tokens), std::move(meta)};
}

Tensor window_reverse(const Tensor& tokens, const WindowMeta& meta) {
  const std::int64_t L = meta.tokens();
  if (tokens.rank() != 3 || tokens.dim(0) != meta.num_windows() || tokens.dim(1) != L) {
    throw DimensionError("window_reverse: tokens " + shape_str(tokens.shape()) +
                         " do not match the partition layout");
  }
  const std::int64_t c = tokens.dim(2), h = meta.h, w = meta.w;
  Tensor x(Shape{meta.t, c, h, w});
  const auto& src = *meta.source;
  for (std::size_t slot = 0; slot < src.size(); ++slot) {
    if (src[slot] < 0) continue;
    const std::int64_t tt = src[slot] / (h * w), hw = src[slot] % (h * w);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      x[(tt * c + ch) * h * w + hw] = tokens[static_cast<std::int64_t>(slot) * c + ch];
    }
  }
  return x;
}

Var partition_stream(Var x, const WindowMeta& meta) {
  const Shape s = x.shape();
  if (s.size() != 5 || s[2] != meta.t || s[3] != meta.h || s[4] != meta.w) {
    throw DimensionError("partition_stream: stream " + shape_str(s) + " does not match the window layout");
  }
  const std::int64_t n = s[0], c = s[1], thw = meta.t * meta.h * meta.w;
  const std::int64_t L = meta.tokens(), nw = meta.num_windows();
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * nw * L * c));
  const auto& src = *meta.source;
  std::size_t o = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::size_t slot = 0; slot < src.size(); ++slot)
      for (std::int64_t ch = 0; ch < c; ++ch, ++o) {
        (*idx)[o] = src[slot] < 0 ? -1 : (b * c + ch) * thw + src[slot];
      }
  return ag::gather(x, idx, {n * nw, L, c});
}

Var reverse_stream(Var tokens, const WindowMeta& meta, std::int64_t n, std::int64_t c) {
  const std::int64_t thw = meta.t * meta.h * meta.w;
  const std::int64_t L = meta.tokens(), nw = meta.num_windows();
  if (tokens.shape() != Shape{n * nw, L, c}) {
    throw DimensionError("reverse_stream: tokens " + shape_str(tokens.shape()) + " do not match the layout");
  }
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * thw), -1);
  const auto& src = *meta.source;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::size_t slot = 0; slot < src.size(); ++slot) {
      if (src[slot] < 0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        (*idx)[static_cast<std::size_t>((b * c + ch) * thw + src[slot])] =
            ((b * nw * L) + static_cast<std::int64_t>(slot)) * c + ch;
      }
    }
  return ag::gather(tokens, idx, {n, c, meta.t, meta.h, meta.w});
}

std::shared_ptr<const std::vector<std::int64_t>> relative_index(std::int64_t p, std::int64_t m) {
  const std::int64_t L = p * m * m;
  const std::int64_t span = 2 * m - 1;
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(L * L));
  for (std::int64_t a = 0; a < L; ++a)
    for (std::int64_t b = 0; b < L; ++b) {
      const std::int64_t dt = a / (m * m) - b / (m * m);
      const std::int64_t dh = (a / m) % m - (b / m) % m;
      const std::int64_t dw = a % m - b % m;
      (*idx)[static_cast<std::size_t>(a * L + b)] =
          ((dt + p - 1) * span + (dh + m - 1)) * span + (dw + m - 1);
    }
  return idx;
}

AttentionParams::AttentionParams(std::int64_t dim_, std::int64_t heads_, std::int64_t p_,
                                 std::int64_t m_, Rng& rng)
    : dim(dim_),
      heads(heads_),
      p(p_),
      m(m_),
      q(dim_, dim_, rng),
      // Softmax is invariant to a per-query constant, so a key bias would
      // never receive gradient.
      k(dim_, dim_, rng, false),
      v(dim_, dim_, rng),
      out(dim_, dim_, rng),
      bias_table(Tensor::randn({relative_table_rows(p_, m_), heads_}, rng, 0.02)),
      rel_index(relative_index(p_, m_)) {
  if (dim % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

void AttentionParams::visit(const std::string& prefix, const StateVisitor& vis) {
  q.visit(prefix + ".q", vis);
  k.visit(prefix + ".k", vis);
  v.visit(prefix + ".v", vis);
  out.visit(prefix + ".out", vis);
  vis.param(prefix + ".bias_table", bias_table);
}

Tensor relative_bias(const AttentionParams& params, const WindowSpec& spec) {
  if (spec.p != params.p || spec.m != params.m) {
    throw ConfigError("window spec does not match the bias table geometry");
  }
  const std::int64_t L = spec.tokens();
  const std::int64_t nh = params.heads;
  Tensor b(Shape{nh, L, L});
  const auto& idx = *params.rel_index;
  for (std::int64_t h = 0; h < nh; ++h)
    for (std::int64_t i = 0; i < L * L; ++i) {
      b[h * L * L + i] = params.bias_table.value[idx[static_cast<std::size_t>(i)] * nh + h];
    }
  return b;
}

namespace {

struct AttnGeometry {
  std::int64_t g, l, d, heads, dh, nw;
};

AttnGeometry attn_geometry(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& table,
                           const std::vector<std::int64_t>& rel, const Tensor* mask,
                           std::int64_t heads) {
  if (q.rank() != 3) throw DimensionError("attention tokens must be [G, L, d]");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention q/k/v shapes differ: " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  AttnGeometry a{q.dim(0), q.dim(1), q.dim(2), heads, q.dim(2) / heads, 1};
  if (a.d % heads != 0) throw ConfigError("attention dim not divisible by heads");
  if (static_cast<std::int64_t>(rel.size()) != a.l * a.l) {
    throw DimensionError("relative index does not match window token count");
  }
  if (table.rank() != 2 || table.dim(1) != heads) throw DimensionError("bias table must be [rows, heads]");
  if (mask) {
    if (mask->rank() != 3 || mask->dim(1) != a.l || mask->dim(2) != a.l || a.g % mask->dim(0) != 0) {
      throw DimensionError("attention mask " + shape_str(mask->shape()) + " does not tile the windows");
    }
    a.nw = mask->dim(0);
  }
  return a;
}

// Scores -> probabilities for one (window, head); writes L x L into prob.
void head_probabilities(const AttnGeometry& a, const double* q, const double* k, const double* table,
                        const std::int64_t* rel, const double* mask, std::int64_t head, double scale,
                        double* prob) {
  const std::int64_t L = a.l;
  gemm(false, true, L, L, a.dh, scale, q + head * a.dh, a.d, k + head * a.dh, a.d, 0.0, prob, L);
  for (std::int64_t i = 0; i < L * L; ++i) {
    prob[i] += table[rel[i] * a.heads + head];
    if (mask) prob[i] += mask[i];
  }
  for (std::int64_t r = 0; r < L; ++r) {
    double* row = prob + r * L;
    const double mx = *std::max_element(row, row + L);
    double s = 0.0;
    for (std::int64_t c = 0; c < L; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    if (!std::isfinite(s)) throw NumericError("non-finite attention scores");
    for (std::int64_t c = 0; c < L; ++c) row[c] /= s;
  }
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& table,
                         const std::vector<std::int64_t>& rel_index, const Tensor* mask,
                         std::int64_t heads) {
  const auto a = attn_geometry(q, k, k, table, rel_index, mask, heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(a.dh));
  Tensor p(Shape{a.g, a.heads, a.l, a.l});
  for (std::int64_t g = 0; g < a.g; ++g)
    for (std::int64_t h = 0; h < a.heads; ++h) {
      head_probabilities(a, q.ptr() + g * a.l * a.d, k.ptr() + g * a.l * a.d, table.ptr(),
                         rel_index.data(), mask ? mask->ptr() + (g % a.nw) * a.l * a.l : nullptr, h,
                         scale, p.ptr() + (g * a.heads + h) * a.l * a.l);
    }
  return p;
}

Var window_attention(Var q, Var k, Var v, Var bias_table,
                     std::shared_ptr<const std::vector<std::int64_t>> rel_index,
                     std::shared_ptr<const Tensor> mask, std::int64_t heads) {
  Tape& tape = *q.tape();
  const auto a = attn_geometry(q.value(), k.value(), v.value(), bias_table.value(), *rel_index,
                               mask.get(), heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(a.dh));
  const std::int64_t L = a.l, LL = a.l * a.l;
  auto probs = std::make_shared<Tensor>(attention_weights(q.value(), k.value(), bias_table.value(),
                                                          *rel_index, mask.get(), heads));
  Tensor out(q.shape());
  for (std::int64_t g = 0; g < a.g; ++g)
    for (std::int64_t h = 0; h < a.heads; ++h) {
      gemm(false, false, L, a.dh, L, 1.0, probs->ptr() + (g * a.heads + h) * LL, L,
           v.value().ptr() + g * L * a.d + h * a.dh, a.d, 0.0, out.ptr() + g * L * a.d + h * a.dh, a.d);
    }
  return tape.record(
      "window_attention", std::move(out), {q, k, v, bias_table},
      [q, k, v, bias_table, rel_index, probs, a, scale, L, LL](Tape& tp, const Tensor& gout) {
        const Tensor& qv = tp.value(q);
        const Tensor& kv = tp.value(k);
        const Tensor& vv = tp.value(v);
        Tensor gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
        Tensor gtable(tp.value(bias_table).shape());
        std::vector<double> gp(static_cast<std::size_t>(LL));
        const auto& rel = *rel_index;
        for (std::int64_t g = 0; g < a.g; ++g)
          for (std::int64_t h = 0; h < a.heads; ++h) {
            const double* p = probs->ptr() + (g * a.heads + h) * LL;
            const std::int64_t off = g * L * a.d + h * a.dh;
            gemm(false, true, L, L, a.dh, 1.0, gout.ptr() + off, a.d, vv.ptr() + off, a.d, 0.0,
                 gp.data(), L);
            gemm(true, false, L, a.dh, L, 1.0, p, L, gout.ptr() + off, a.d, 1.0, gv.ptr() + off, a.d);
            for (std::int64_t r = 0; r < L; ++r) {
              double dot = 0.0;
              for (std::int64_t c = 0; c < L; ++c) dot += gp[r * L + c] * p[r * L + c];
              for (std::int64_t c = 0; c < L; ++c) {
                const std::size_t i = static_cast<std::size_t>(r * L + c);
                gp[i] = p[i] * (gp[i] - dot);
                gtable[rel[i] * a.heads + h] += gp[i];
              }
            }
            gemm(false, false, L, a.dh, L, scale, gp.data(), L, kv.ptr() + off, a.d, 1.0,
                 gq.ptr() + off, a.d);
            gemm(true, false, L, a.dh, L, scale, gp.data(), L, qv.ptr() + off, a.d, 1.0,
                 gk.ptr() + off, a.d);
          }
        tp.accumulate(q, gq);
        tp.accumulate(k, gk);
        tp.accumulate(v, gv);
        tp.accumulate(bias_table, gtable);
      });
}

Var self_attention(Var tokens, AttentionParams& params, std::shared_ptr<const Tensor> mask) {
  return cross_attention(tokens, tokens, tokens, params, std::move(mask));
}

Var cross_attention(Var q_tokens, Var k_tokens, Var v_tokens, AttentionParams& params,
                    std::shared_ptr<const Tensor> mask) {
  if (q_tokens.shape() != k_tokens.shape() || q_tokens.shape() != v_tokens.shape()) {
    throw DimensionError("cross_attention stream shapes differ");
  }
  Var q = params.q.forward(q_tokens);
  Var k = params.k.forward(k_tokens);
  Var v = params.v.forward(v_tokens);
  Var o = window_attention(q, k, v, use(q, params.bias_table), params.rel_index, std::move(mask),
                           params.heads);
  return params.out.forward(o);
}

SelfAttentionBlock::SelfAttentionBlock(std::int64_t dim, std::int64_t heads, const WindowSpec& s,
                                       Rng& rng)
    : norm(dim), attn(dim, heads, s.p, s.m, rng), spec(s) {}

Var SelfAttentionBlock::forward(Var x) {
  const Shape s = x.shape();
  const WindowMeta meta = make_window_meta(s[2], s[3], s[4], spec);
  Var tokens = partition_stream(x, meta);
  Var y = ag::add(tokens, self_attention(norm.forward(tokens), attn, meta.mask));
  return reverse_stream(y, meta, s[0], s[1]);
}

void SelfAttentionBlock::visit(const std::string& prefix, const StateVisitor& v) {
  norm.visit(prefix + ".norm", v);
  attn.visit(prefix + ".attn", v);
}

QueryStream query_stream_from_string(const std::string& s) {
  if (s == "tdcf") return QueryStream::Tdcf;
  if (s == "stf") return QueryStream::Stf;
  if (s == "sf") return QueryStream::Sf;
  throw ConfigError("unknown query stream '" + s + "' (expected tdcf, stf or sf)");
}

const char* to_string(QueryStream q) {
  switch (q) {
    case QueryStream::Tdcf: return "tdcf";
    case QueryStream::Stf: return "stf";
    case QueryStream::Sf: return "sf";
  }
  return "?";
}

Var repeat_time(Var x, std::int64_t t) {
  const Shape s = x.shape();
  if (s.size() != 4) throw DimensionError("repeat_time expects [N,C,H,W]");
  const std::int64_t hw = s[2] * s[3];
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(s[0] * s[1] * t * hw));
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::int64_t tt = 0; tt < t; ++tt)
      for (std::int64_t i = 0; i < hw; ++i) idx->push_back(nc * hw + i);
  return ag::gather(x, idx, {s[0], s[1], t, s[2], s[3]});
}

TdcstaStage::TdcstaStage(const StageConfig& cfg, Rng& rng)
    : cfg_(cfg),
      proj_tdcf_(cfg.c_tdcf, cfg.dim, 1, 1, 1, TemporalMode::Valid, true, rng),
      proj_stf_(cfg.c_stf, cfg.dim, 1, 1, 1, TemporalMode::Valid, true, rng),
      proj_sf_(cfg.c_sf, cfg.dim, 1, 1, true, rng),
      norm_q_(cfg.dim),
      norm_k_(cfg.dim, false),
      norm_v_(cfg.dim),
      cross_(cfg.dim, cfg.heads, cfg.p, cfg.m, rng) {
  for (int s = 0; s < 3; ++s) {
    sa_.emplace_back(cfg.dim, cfg.heads, WindowSpec::regular(cfg.p, cfg.m), rng);
    sa_.emplace_back(cfg.dim, cfg.heads, WindowSpec::shifted(cfg.p, cfg.m), rng);
  }
}

Var TdcstaStage::forward(Var tdcf, Var stf, Var sf) {
  const Shape s = tdcf.shape();
  if (stf.shape().size() != 5 || stf.shape()[0] != s[0] || stf.shape()[2] != s[2] ||
      stf.shape()[3] != s[3] || stf.shape()[4] != s[4]) {
    throw DimensionError("TDCSTA: 3D stream " + shape_str(stf.shape()) + " does not match " + shape_str(s));
  }
  if (sf.shape().size() != 4 || sf.shape()[0] != s[0] || sf.shape()[2] != s[3] || sf.shape()[3] != s[4]) {
    throw DimensionError("TDCSTA: 2D stream " + shape_str(sf.shape()) + " does not match " + shape_str(s));
  }
  std::array<Var, 3> streams{proj_tdcf_.forward(tdcf), proj_stf_.forward(stf),
                             repeat_time(proj_sf_.forward(sf), s[2])};
  for (std::size_t i = 0; i < 3; ++i) {
    streams[i] = sa_[2 * i].forward(streams[i]);
    streams[i] = sa_[2 * i + 1].forward(streams[i]);
  }
  std::size_t qi = 0, ki = 1, vi = 2;
  switch (cfg_.query) {
    case QueryStream::Tdcf: break;
    case QueryStream::Stf: qi = 1; ki = 0; vi = 2; break;
    case QueryStream::Sf: qi = 2; ki = 1; vi = 0; break;
  }
  const WindowMeta meta = make_window_meta(s[2], s[3], s[4], WindowSpec::regular(cfg_.p, cfg_.m));
  Var q = partition_stream(streams[qi], meta);
  Var k = partition_stream(streams[ki], meta);
  Var v = partition_stream(streams[vi], meta);
  Var ca = cross_attention(norm_q_.forward(q), norm_k_.forward(k), norm_v_.forward(v), cross_, meta.mask);
  return reverse_stream(ag::add(q, ca), meta, s[0], cfg_.dim);
}

void TdcstaStage::visit(const std::string& prefix, const StateVisitor& v) {
  proj_tdcf_.visit(prefix + ".proj_tdcf", v);
  proj_stf_.visit(prefix + ".proj_stf", v);
  proj_sf_.visit(prefix + ".proj_sf", v);
  static const char* names[6] = {"sa_tdcf", "sa_tdcf_shift", "sa_stf", "sa_stf_shift", "sa_sf", "sa_sf_shift"};
  for (std::size_t i = 0; i < sa_.size(); ++i) sa_[i].visit(prefix + "." + names[i], v);
  norm_q_.visit(prefix + ".norm_q", v);
  norm_k_.visit(prefix + ".norm_k", v);
  norm_v_.visit(prefix + ".norm_v", v);
  cross_.visit(prefix + ".cross", v);
}

std::vector<metrics::LayerDesc> TdcstaStage::describe(std::int64_t n, std::int64_t t, std::int64_t h,
                                                      std::int64_t w, const std::string& name) const {
  std::vector<metrics::LayerDesc> out;
  const std::int64_t d = cfg_.dim;
  auto conv = [&](const std::string& nm, std::int64_t cin, bool is2d) {
    metrics::LayerDesc l;
    l.name = name + "." + nm;
    l.bias = true;
    if (is2d) {
      l.type = "conv2d";
      l.input = {n, cin, h, w};
      l.weight = {d, cin, 1, 1};
    } else {
      l.type = "conv3d";
      l.input = {n, cin, t, h, w};
      l.weight = {d, cin, 1, 1, 1};
      l.temporal_mode = "valid";
    }
    out.push_back(l);
  };
  conv("proj_tdcf", cfg_.c_tdcf, false);
  conv("proj_stf", cfg_.c_stf, false);
  conv("proj_sf", cfg_.c_sf, true);
  const WindowMeta meta = make_window_meta(t, h, w, WindowSpec::regular(cfg_.p, cfg_.m));
  const std::int64_t L = meta.tokens();
  const std::int64_t windows = n * meta.num_windows();
  auto attention = [&](const std::string& nm, const std::vector<std::string>& norms) {
    for (const auto& norm : norms) {
      metrics::LayerDesc ln;
      ln.type = "layer_norm";
      ln.name = name + "." + norm;
      ln.dim = d;
      ln.input = {windows, L, d};
      ln.bias = norm != "norm_k";
      out.push_back(ln);
    }
    for (const char* proj : {"q", "k", "v", "out"}) {
      metrics::LayerDesc lin;
      lin.type = "linear";
      lin.name = name + "." + nm + "." + proj;
      lin.input = {windows, L, d};
      lin.weight = {d, d};
      lin.bias = std::string(proj) != "k";
      out.push_back(lin);
    }
    metrics::LayerDesc at;
    at.type = "attention";
    at.name = name + "." + nm + ".core";
    at.tokens = L;
    at.windows = windows;
    at.dim = d;
    at.heads = cfg_.heads;
    at.table_rows = relative_table_rows(cfg_.p, cfg_.m);
    out.push_back(at);
    metrics::LayerDesc res;
    res.type = "add";
    res.name = name + "." + nm + ".residual";
    res.input = {windows, L, d};
    out.push_back(res);
  };
  static const char* names[6] = {"sa_tdcf", "sa_tdcf_shift", "sa_stf", "sa_stf_shift", "sa_sf", "sa_sf_shift"};
  for (const char* nm : names) attention(nm, {std::string(nm) + ".norm"});
  attention("cross", {"norm_q", "norm_k", "norm_v"});
  return out;
}

std::vector<Var> tdcsta_forward(std::vector<TdcstaStage>& stages, const std::vector<Var>& tdcf,
                                const std::vector<Var>& stf, const std::vector<Var>& sf) {
  if (tdcf.size() != stages.size() || stf.size() != stages.size() || sf.size() != stages.size()) {
    throw DimensionError("TDCSTA needs one stream triple per stage");
  }
  std::vector<Var> out;
  for (std::size_t i = 0; i < stages.size(); ++i) out.push_back(stages[i].forward(tdcf[i], stf[i], sf[i]));
  return out;
}

}  // namespace tdcnet::attn
