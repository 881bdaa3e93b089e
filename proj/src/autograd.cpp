// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tdcnet {

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.param = p.trainable ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.tape() != this) throw UsageError("op '" + n.op + "' mixes variables from different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || requires_grad(v);
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor* Tape::grad(Var v) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(v.id()));
  return n.grad ? &*n.grad : nullptr;
}

Tensor& Tape::grad_buffer(Var v) {
  auto& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (!n.grad) n.grad = Tensor(n.value.shape());
  return *n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  auto& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " != value shape " +
                         shape_str(n.value.shape()) + " at op '" + n.op + "'");
  }
  if (!n.grad) {
    n.grad = g;
    return;
  }
  auto& acc = *n.grad;
  for (std::int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw UsageError("backward root belongs to another tape");
  if (value(root).numel() != 1) {
    throw UsageError("backward needs a scalar root, got shape " + shape_str(value(root).shape()));
  }
  visit_order_.clear();
  auto& r = nodes_.at(static_cast<std::size_t>(root.id()));
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  for (int id = root.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.grad) continue;
    if (n.backward) {
      visit_order_.push_back(id);
      // The callback may append to sibling grads but never to the node list.
      const Tensor g = *n.grad;
      n.backward(*this, g);
    }
    if (n.param) {
      auto& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += (*n.grad)[i];
    }
  }
}

BatchNormState::BatchNormState(std::int64_t channels)
    : gamma(Tensor(Shape{channels}, 1.0)),
      beta(Tensor(Shape{channels}, 0.0)),
      running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0) {}

namespace ag {

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw UsageError("operation on an empty variable");
  return *v.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Var conv3d(Var input, Var weight, std::optional<Var> bias, std::int64_t stride, std::int64_t pad,
           TemporalMode mode) {
  Tape& t = tape_of(input);
  const Tensor* b = bias ? &bias->value() : nullptr;
  Tensor y = tdcnet::conv3d(input.value(), weight.value(), b, stride, pad, mode);
  std::vector<Var> ins{input, weight};
  if (bias) ins.push_back(*bias);
  return t.record("conv3d", std::move(y), ins,
                  [input, weight, bias, stride, pad, mode](Tape& tp, const Tensor& g) {
                    Tensor gx, gw, gb;
                    const bool need_x = tp.requires_grad(input);
                    const bool need_w = tp.requires_grad(weight);
                    const bool need_b = bias && tp.requires_grad(*bias);
                    conv3d_backward(tp.value(input), tp.value(weight), g, stride, pad, mode,
                                    need_x ? &gx : nullptr, need_w ? &gw : nullptr,
                                    need_b ? &gb : nullptr);
                    if (need_x) tp.accumulate(input, gx);
                    if (need_w) tp.accumulate(weight, gw);
                    if (need_b) tp.accumulate(*bias, gb);
                  });
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, std::int64_t stride, std::int64_t pad) {
  const Shape s = input.shape();
  const Shape k = weight.shape();
  if (s.size() != 4) throw DimensionError("conv2d input must be [N,C,H,W], got " + shape_str(s));
  if (k.size() != 4) throw DimensionError("conv2d weight must be [C_out,C_in,Kh,Kw], got " + shape_str(k));
  Var x5 = reshape(input, {s[0], s[1], 1, s[2], s[3]});
  Var w5 = reshape(weight, {k[0], k[1], 1, k[2], k[3]});
  Var y = conv3d(x5, w5, bias, stride, pad, TemporalMode::Valid);
  const Shape o = y.shape();
  return reshape(y, {o[0], o[1], o[3], o[4]});
}

Var batch_norm(Var input, BatchNormState& bn, BnMode mode, bool update_stats, double momentum,
               double eps) {
  Tape& t = tape_of(input);
  Var gamma = t.param(bn.gamma);
  Var beta = t.param(bn.beta);
  // Taken after the parameter nodes are added; node storage may move on insert.
  const Tensor& x = input.value();
  if (x.rank() < 2) throw DimensionError("batch_norm input needs a channel axis 1");
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.dim(1);
  const std::int64_t inner = x.numel() / (n * c);
  if (bn.gamma.value.numel() != c) {
    throw DimensionError("batch_norm has " + std::to_string(bn.gamma.value.numel()) +
                         " channels, input axis 1 has " + std::to_string(c));
  }
  const double count = static_cast<double>(n * inner);

  Tensor mean(Shape{c});
  Tensor inv_std(Shape{c});
  if (mode == BnMode::Train) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* p = x.ptr() + (b * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / count;
      double v = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* p = x.ptr() + (b * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / count;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      if (update_stats) {
        const double unbiased = count > 1.0 ? v / (count - 1.0) : var;
        bn.running_mean[ch] = (1.0 - momentum) * bn.running_mean[ch] + momentum * mu;
        bn.running_var[ch] = (1.0 - momentum) * bn.running_var[ch] + momentum * unbiased;
      }
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double var = bn.running_var[ch] + eps;
      if (!(var > 0.0)) throw NumericError("batch_norm sigma is not positive on channel " + std::to_string(ch));
      mean[ch] = bn.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(var);
    }
  }

  Tensor y(x.shape());
  Tensor xhat(x.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double g = gamma.value()[ch];
      const double be = beta.value()[ch];
      const std::int64_t off = (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const double h = (x[off + i] - mean[ch]) * inv_std[ch];
        xhat[off + i] = h;
        y[off + i] = g * h + be;
      }
    }
  }

  const bool train = mode == BnMode::Train;
  return t.record(
      "batch_norm", std::move(y), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std, n, c, inner, count, train](
          Tape& tp, const Tensor& g) {
        Tensor gg(Shape{c});
        Tensor gb(Shape{c});
        Tensor gx(tp.value(input).shape());
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              sg += g[off + i];
              sgx += g[off + i] * xhat[off + i];
            }
          }
          gb[ch] = sg;
          gg[ch] = sgx;
          const double scale = tp.value(gamma)[ch] * inv_std[ch];
          const double mg = sg / count;
          const double mgx = sgx / count;
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              gx[off + i] = train ? scale * (g[off + i] - mg - xhat[off + i] * mgx)
                                  : scale * g[off + i];
            }
          }
        }
        tp.accumulate(input, gx);
        tp.accumulate(gamma, gg);
        tp.accumulate(beta, gb);
      });
}

Var tap_combine(const std::vector<Var>& bases, const std::vector<std::vector<double>>& coef) {
  if (bases.empty()) throw UsageError("tap_combine needs at least one base weight");
  Tape& t = tape_of(bases.front());
  const Shape& bs = bases.front().shape();
  if (bs.size() != 4) throw DimensionError("base weights must be [C_out,C_in,Kh,Kw], got " + shape_str(bs));
  for (const auto& b : bases) {
    if (b.shape() != bs) throw DimensionError("base weights must share one shape");
  }
  const std::int64_t k = static_cast<std::int64_t>(coef.size());
  for (const auto& row : coef) {
    if (row.size() != bases.size()) throw DimensionError("tap coefficient row length != base count");
  }
  const std::int64_t co = bs[0], ci = bs[1], sp = bs[2] * bs[3];
  Tensor out(Shape{co, ci, k, bs[2], bs[3]});
  for (std::int64_t oc = 0; oc < co * ci; ++oc) {
    for (std::int64_t tap = 0; tap < k; ++tap) {
      double* dst = out.ptr() + (oc * k + tap) * sp;
      for (std::size_t b = 0; b < bases.size(); ++b) {
        const double cf = coef[static_cast<std::size_t>(tap)][b];
        if (cf == 0.0) continue;
        const double* src = bases[b].value().ptr() + oc * sp;
        for (std::int64_t i = 0; i < sp; ++i) dst[i] += cf * src[i];
      }
    }
  }
  return t.record("tap_combine", std::move(out), bases,
                  [bases, coef, co, ci, k, sp, bs](Tape& tp, const Tensor& g) {
                    for (std::size_t b = 0; b < bases.size(); ++b) {
                      if (!tp.requires_grad(bases[b])) continue;
                      Tensor gb(bs);
                      for (std::int64_t oc = 0; oc < co * ci; ++oc) {
                        for (std::int64_t tap = 0; tap < k; ++tap) {
                          const double cf = coef[static_cast<std::size_t>(tap)][b];
                          if (cf == 0.0) continue;
                          const double* src = g.ptr() + (oc * k + tap) * sp;
                          double* dst = gb.ptr() + oc * sp;
                          for (std::int64_t i = 0; i < sp; ++i) dst[i] += cf * src[i];
                        }
                      }
                      tp.accumulate(bases[b], gb);
                    }
                  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  return t.record("add", std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("add_n of nothing");
  Tape& t = tape_of(xs.front());
  Tensor y = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(y, xs[k].value(), "add_n");
    const Tensor& v = xs[k].value();
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += v[i];
  }
  return t.record("add_n", std::move(y), xs, [xs](Tape& tp, const Tensor& g) {
    for (const auto& x : xs) tp.accumulate(x, g);
  });
}

Var add_tiled(Var x, Var b) {
  Tape& t = tape_of(x);
  const std::int64_t nb = b.value().numel();
  if (x.value().numel() % nb != 0) {
    throw DimensionError("add_tiled: " + shape_str(b.shape()) + " does not tile " + shape_str(x.shape()));
  }
  Tensor y = x.value();
  const Tensor& bv = b.value();
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += bv[i % nb];
  return t.record("add_tiled", std::move(y), {x, b}, [x, b, nb](Tape& tp, const Tensor& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(b)) {
      Tensor gb(tp.value(b).shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) gb[i % nb] += g[i];
      tp.accumulate(b, gb);
    }
  });
}

Var scale(Var x, double s) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  for (auto& v : y.storage()) v *= s;
  return t.record("scale", std::move(y), {x}, [x, s](Tape& tp, const Tensor& g) {
    Tensor gx = g;
    for (auto& v : gx.storage()) v *= s;
    tp.accumulate(x, gx);
  });
}

Var silu(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  return t.record("silu", std::move(y), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor gx(xv.shape());
    for (std::int64_t i = 0; i < gx.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      gx[i] = g[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
    tp.accumulate(x, gx);
  });
}

Var softmax_last(Var x) {
  Tape& t = tape_of(x);
  Tensor y = tdcnet::softmax_last(x.value());
  // Backward recomputes the probabilities from the saved input.
  return t.record("softmax_last", std::move(y), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor y = tdcnet::softmax_last(tp.value(x));
    const std::int64_t len = y.dim(-1);
    const std::int64_t rows = y.numel() / len;
    Tensor gx(y.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t i = 0; i < len; ++i) dot += g[r * len + i] * y[r * len + i];
      for (std::int64_t i = 0; i < len; ++i) {
        gx[r * len + i] = y[r * len + i] * (g[r * len + i] - dot);
      }
    }
    tp.accumulate(x, gx);
  });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  Tape& t = tape_of(x);
  Tensor y = tdcnet::linear(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  std::vector<Var> ins{x, weight};
  if (bias) ins.push_back(*bias);
  return t.record("linear", std::move(y), ins, [x, weight, bias](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(weight);
    const std::int64_t d_in = wv.dim(1);
    const std::int64_t d_out = wv.dim(0);
    const std::int64_t rows = xv.numel() / d_in;
    if (tp.requires_grad(x)) {
      Tensor gx(xv.shape());
      gemm(false, false, rows, d_in, d_out, 1.0, g.ptr(), d_out, wv.ptr(), d_in, 0.0, gx.ptr(), d_in);
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(weight)) {
      Tensor gw(wv.shape());
      gemm(true, false, d_out, d_in, rows, 1.0, g.ptr(), d_out, xv.ptr(), d_in, 0.0, gw.ptr(), d_in);
      tp.accumulate(weight, gw);
    }
    if (bias && tp.requires_grad(*bias)) {
      Tensor gb(Shape{d_out});
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t o = 0; o < d_out; ++o) gb[o] += g[r * d_out + o];
      tp.accumulate(*bias, gb);
    }
  });
}

Var layer_norm_last(Var x, Var gamma, std::optional<Var> beta, double eps) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::int64_t d = xv.dim(-1);
  if (gamma.value().numel() != d || (beta && beta->value().numel() != d)) {
    throw DimensionError("layer_norm parameters must match last axis " + std::to_string(d));
  }
  const std::int64_t rows = xv.numel() / d;
  Tensor y(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv(Shape{rows});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* p = xv.ptr() + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += p[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv[r] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const double h = (p[i] - mu) * is;
      xhat[r * d + i] = h;
      y[r * d + i] = gamma.value()[i] * h + (beta ? beta->value()[i] : 0.0);
    }
  }
  std::vector<Var> ins{x, gamma};
  if (beta) ins.push_back(*beta);
  return t.record("layer_norm", std::move(y), ins,
                  [x, gamma, beta, xhat = std::move(xhat), inv, d, rows](Tape& tp, const Tensor& g) {
                    const Tensor& gm = tp.value(gamma);
                    Tensor gx(tp.value(x).shape());
                    Tensor gg(Shape{d});
                    Tensor gb(Shape{d});
                    for (std::int64_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::int64_t i = 0; i < d; ++i) {
                        const double gh = g[r * d + i] * gm[i];
                        s1 += gh;
                        s2 += gh * xhat[r * d + i];
                        gg[i] += g[r * d + i] * xhat[r * d + i];
                        gb[i] += g[r * d + i];
                      }
                      s1 /= static_cast<double>(d);
                      s2 /= static_cast<double>(d);
                      for (std::int64_t i = 0; i < d; ++i) {
                        const double gh = g[r * d + i] * gm[i];
                        gx[r * d + i] = inv[r] * (gh - s1 - xhat[r * d + i] * s2);
                      }
                    }
                    tp.accumulate(x, gx);
                    tp.accumulate(gamma, gg);
                    if (beta) tp.accumulate(*beta, gb);
                  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor y = x.value().reshaped(std::move(shape));
  return t.record("reshape", std::move(y), {x}, [x](Tape& tp, const Tensor& g) {
    tp.accumulate(x, g.reshaped(tp.value(x).shape()));
  });
}

namespace {

// A tensor viewed as [outer, extent, inner] around one axis.
struct AxisView {
  std::int64_t outer = 1, extent = 0, inner = 1;
};

AxisView axis_view(const Shape& s, std::int64_t axis) {
  if (axis < 0 || axis >= static_cast<std::int64_t>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisView v;
  for (std::int64_t i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.extent = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Var concat(const std::vector<Var>& xs, std::int64_t axis) {
  if (xs.empty()) throw UsageError("concat of nothing");
  Tape& t = tape_of(xs.front());
  Shape out_shape = xs.front().shape();
  const auto ax = static_cast<std::size_t>(axis);
  axis_view(out_shape, axis);
  std::vector<std::int64_t> extents;
  out_shape[ax] = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat rank mismatch: " + shape_str(s));
    extents.push_back(s[ax]);
    out_shape[ax] += s[ax];
    s[ax] = out_shape[ax];
    if (s != out_shape) throw DimensionError("concat shapes differ off axis " + std::to_string(axis));
  }
  const AxisView o = axis_view(out_shape, axis);
  Tensor y(out_shape);
  std::int64_t at = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double* src = xs[k].value().ptr();
    const std::int64_t block = extents[k] * o.inner;
    for (std::int64_t i = 0; i < o.outer; ++i)
      std::copy_n(src + i * block, block, y.ptr() + i * o.extent * o.inner + at * o.inner);
    at += extents[k];
  }
  return t.record("concat", std::move(y), xs, [xs, extents, o](Tape& tp, const Tensor& g) {
    std::int64_t at = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const std::int64_t block = extents[k] * o.inner;
      if (tp.requires_grad(xs[k])) {
        Tensor& gx = tp.grad_buffer(xs[k]);
        for (std::int64_t i = 0; i < o.outer; ++i) {
          const double* s = g.ptr() + i * o.extent * o.inner + at * o.inner;
          double* d = gx.ptr() + i * block;
          for (std::int64_t j = 0; j < block; ++j) d[j] += s[j];
        }
      }
      at += extents[k];
    }
  });
}

Var narrow(Var x, std::int64_t axis, std::int64_t start, std::int64_t len) {
  Tape& t = tape_of(x);
  const AxisView v = axis_view(x.shape(), axis);
  if (start < 0 || len < 0 || start + len > v.extent) {
    throw DimensionError("narrow [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") outside axis of length " + std::to_string(v.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor y(out_shape);
  const std::int64_t block = len * v.inner;
  const double* src = x.value().ptr();
  for (std::int64_t i = 0; i < v.outer; ++i)
    std::copy_n(src + (i * v.extent + start) * v.inner, block, y.ptr() + i * block);
  return t.record("narrow", std::move(y), {x}, [x, v, start, block](Tape& tp, const Tensor& g) {
    if (!tp.requires_grad(x)) return;
    Tensor& gx = tp.grad_buffer(x);
    for (std::int64_t i = 0; i < v.outer; ++i) {
      double* d = gx.ptr() + (i * v.extent + start) * v.inner;
      const double* s = g.ptr() + i * block;
      for (std::int64_t j = 0; j < block; ++j) d[j] += s[j];
    }
  });
}

Var gather(Var x, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape) {
  Tape& t = tape_of(x);
  if (static_cast<std::int64_t>(index->size()) != shape_numel(out_shape)) {
    throw DimensionError("gather index length does not match output shape " + shape_str(out_shape));
  }
  const Tensor& xv = x.value();
  Tensor y(std::move(out_shape));
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.numel()) throw DimensionError("gather index out of range");
    y[static_cast<std::int64_t>(i)] = idx[i] < 0 ? 0.0 : xv[idx[i]];
  }
  return t.record("gather", std::move(y), {x}, [x, index](Tape& tp, const Tensor& g) {
    if (!tp.requires_grad(x)) return;
    Tensor& gx = tp.grad_buffer(x);
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) gx[idx[i]] += g[static_cast<std::int64_t>(i)];
    }
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.record("sum", Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    tp.accumulate(x, Tensor(tp.value(x).shape(), g[0]));
  });
}

Var weighted_sum(Var x, const Tensor& w) {
  Tape& t = tape_of(x);
  require_same_shape(x.value(), w, "weighted_sum");
  double s = 0.0;
  for (std::int64_t i = 0; i < w.numel(); ++i) s += x.value()[i] * w[i];
  return t.record("weighted_sum", Tensor::scalar(s), {x}, [x, w](Tape& tp, const Tensor& g) {
    Tensor gx = w;
    for (auto& v : gx.storage()) v *= g[0];
    tp.accumulate(x, gx);
  });
}

Var bce_sum(Var p, const Tensor& y) {
  Tape& t = tape_of(p);
  require_same_shape(p.value(), y, "bce_sum");
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const double q = p.value()[i];
    if (!(q > 0.0 && q < 1.0)) throw NumericError("bce_sum probability outside (0, 1)");
    s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return t.record("bce_sum", Tensor::scalar(s), {p}, [p, y](Tape& tp, const Tensor& g) {
    const Tensor& pv = tp.value(p);
    Tensor gp(pv.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      gp[i] = g[0] * ((1.0 - y[i]) / (1.0 - pv[i]) - y[i] / pv[i]);
    }
    tp.accumulate(p, gp);
  });
}

}  // namespace ag

namespace {

std::vector<std::int64_t> choose_entries(const Tensor& analytic, const GradCheckOptions& opts,
                                         std::mt19937_64& rng) {
  const std::int64_t n = analytic.numel();
  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  if (opts.max_entries <= 0 || opts.max_entries >= n) return all;
  std::vector<std::int64_t> picked;
  if (opts.selection != EntrySelection::Random) {
    std::vector<std::int64_t> order = all;
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return std::abs(analytic[a]) > std::abs(analytic[b]);
    });
    const std::int64_t top =
        opts.selection == EntrySelection::Largest ? opts.max_entries : opts.max_entries / 2;
    picked.assign(order.begin(), order.begin() + top);
  }
  std::shuffle(all.begin(), all.end(), rng);
  for (std::int64_t i : all) {
    if (static_cast<std::int64_t>(picked.size()) >= opts.max_entries) break;
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  return picked;
}

void update_report(GradCheckReport& rep, double analytic, double numeric, std::size_t tensor,
                   std::int64_t index, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double rel = std::abs(analytic - numeric) / denom;
  ++rep.entries_checked;
  if (rel > rep.max_rel_error || rep.worst.empty()) {
    rep.max_rel_error = rel;
    rep.worst = std::to_string(tensor) + "#" + std::to_string(index);
    rep.worst_analytic = analytic;
    rep.worst_numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                           std::vector<Tensor> inputs, const GradCheckOptions& opts) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
    Var root = build(tape, leaves);
    if (root.value().numel() != 1) throw UsageError("grad_check needs a scalar-valued root");
    const double v = root.value()[0];
    if (with_grad) {
      tape.backward(root);
      for (const auto& l : leaves) {
        const Tensor* g = tape.grad(l);
        grads->push_back(g ? *g : Tensor(l.shape()));
      }
    }
    return v;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);
  std::mt19937_64 rng(opts.seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i : choose_entries(analytic[k], opts, rng)) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opts.step;
      const double fp = evaluate(false, nullptr);
      inputs[k][i] = orig - opts.step;
      const double fm = evaluate(false, nullptr);
      inputs[k][i] = orig;
      update_report(rep, analytic[k][i], (fp - fm) / (2.0 * opts.step), k, i);
    }
  }
  return rep;
}

GradCheckReport grad_check_params(const std::function<Var(Tape&)>& build,
                                  const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opts) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var root = build(tape);
    if (root.value().numel() != 1) throw UsageError("grad_check needs a scalar-valued root");
    tape.backward(root);
  }
  std::vector<Tensor> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto evaluate = [&]() {
    Tape tape;
    return build(tape).value()[0];
  };
  std::mt19937_64 rng(opts.seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& v = params[k]->value;
    for (std::int64_t i : choose_entries(analytic[k], opts, rng)) {
      const double orig = v[i];
      v[i] = orig + opts.step;
      const double fp = evaluate();
      v[i] = orig - opts.step;
      const double fm = evaluate();
      v[i] = orig;
      update_report(rep, analytic[k][i], (fp - fm) / (2.0 * opts.step), k, i);
    }
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

GradCheckReport grad_check_directional(const std::function<Var(Tape&)>& build,
                                       const std::vector<Parameter*>& params,
                                       const GradCheckOptions& opts) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var root = build(tape);
    if (root.value().numel() != 1) throw UsageError("grad_check needs a scalar-valued root");
    tape.backward(root);
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  std::vector<Tensor> dir;
  double norm2 = 0.0;
  for (auto* p : params) {
    Tensor d(p->value.shape());
    for (auto& v : d.storage()) {
      v = normal(rng);
      norm2 += v * v;
    }
    dir.push_back(std::move(d));
  }
  const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
  double analytic = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::int64_t i = 0; i < dir[k].numel(); ++i) {
      dir[k][i] *= inv;
      analytic += params[k]->grad[i] * dir[k][i];
    }
  }
  std::vector<Tensor> saved;
  for (auto* p : params) saved.push_back(p->value);
  auto shifted = [&](double h) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::int64_t i = 0; i < dir[k].numel(); ++i) params[k]->value[i] = saved[k][i] + h * dir[k][i];
    }
    Tape tape;
    return build(tape).value()[0];
  };
  const double fp = shifted(opts.step);
  const double fm = shifted(-opts.step);
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = saved[k];
  for (auto* p : params) p->zero_grad();
  GradCheckReport rep;
  update_report(rep, analytic, (fp - fm) / (2.0 * opts.step), 0, 0);
  rep.worst = "direction";
  return rep;
}

GradCheckReport grad_check_tensorwise(const std::function<Var(Tape&)>& build,
                                      const std::vector<Parameter*>& params,
                                      const GradCheckOptions& opts) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var root = build(tape);
    if (root.value().numel() != 1) throw UsageError("grad_check needs a scalar-valued root");
    tape.backward(root);
  }
  std::vector<Tensor> analytic;
  double global2 = 0.0;
  for (auto* p : params) {
    analytic.push_back(p->grad);
    for (double g : p->grad.storage()) global2 += g * g;
  }
  const double floor = opts.global_scale ? std::max(1e-8, std::sqrt(global2)) : 1e-8;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor dir = analytic[k];
    double norm2 = 0.0;
    for (double v : dir.storage()) norm2 += v * v;
    if (norm2 == 0.0) {
      for (auto& v : dir.storage()) {
        v = normal(rng);
        norm2 += v * v;
      }
    }
    const double inv = 1.0 / std::sqrt(norm2);
    double a = 0.0;
    for (std::int64_t i = 0; i < dir.numel(); ++i) {
      dir[i] *= inv;
      a += analytic[k][i] * dir[i];
    }
    Tensor& v = params[k]->value;
    const Tensor saved = v;
    auto at = [&](double h) {
      for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = saved[i] + h * dir[i];
      Tape tape;
      return build(tape).value()[0];
    };
    const double fp = at(opts.step);
    const double fm = at(-opts.step);
    v = saved;
    update_report(rep, a, (fp - fm) / (2.0 * opts.step), k, 0, floor);
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

}  // namespace tdcnet
