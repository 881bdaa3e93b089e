// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/kernels.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace tdcnet {

const char* to_string(TemporalMode mode) {
  switch (mode) {
    case TemporalMode::CausalReplicate: return "causal_replicate";
    case TemporalMode::Valid: return "valid";
    case TemporalMode::SameZero: return "same_zero";
  }
  return "?";
}

TemporalMode temporal_mode_from_string(const std::string& s) {
  if (s == "causal_replicate") return TemporalMode::CausalReplicate;
  if (s == "valid") return TemporalMode::Valid;
  if (s == "same_zero") return TemporalMode::SameZero;
  throw ConfigError("unknown temporal mode '" + s + "'");
}

Conv3dGeometry Conv3dGeometry::make(const Shape& input, const Shape& weight, std::int64_t stride,
                                    std::int64_t pad, TemporalMode mode) {
  if (input.size() != 5) throw DimensionError("conv3d input must be [N,C,T,H,W], got " + shape_str(input));
  if (weight.size() != 5) {
    throw DimensionError("conv3d weight must be [C_out,C_in,Kt,Kh,Kw], got " + shape_str(weight));
  }
  if (input[1] != weight[1]) {
    throw DimensionError("conv3d C_in mismatch on axis 1: input " + std::to_string(input[1]) +
                         " vs weight " + std::to_string(weight[1]));
  }
  if (weight[3] % 2 == 0) throw DimensionError("conv3d Kh (axis 3) must be odd");
  if (weight[4] % 2 == 0) throw DimensionError("conv3d Kw (axis 4) must be odd");
  if (stride < 1) throw ConfigError("conv3d spatial stride must be >= 1");
  if (pad < 0) throw ConfigError("conv3d spatial pad must be >= 0");

  Conv3dGeometry g{};
  g.n = input[0];
  g.c_in = input[1];
  g.t = input[2];
  g.h = input[3];
  g.w = input[4];
  g.c_out = weight[0];
  g.kt = weight[2];
  g.kh = weight[3];
  g.kw = weight[4];
  g.stride = stride;
  g.pad = pad;
  g.mode = mode;
  switch (mode) {
    case TemporalMode::Valid:
      if (g.kt > g.t) {
        throw ConfigError("conv3d temporal kernel " + std::to_string(g.kt) +
                          " exceeds sequence length " + std::to_string(g.t) + " in valid mode");
      }
      g.t_out = g.t - g.kt + 1;
      break;
    case TemporalMode::SameZero:
      if (g.kt % 2 == 0) throw ConfigError("same_zero temporal mode needs an odd Kt");
      g.t_out = g.t;
      break;
    case TemporalMode::CausalReplicate:
      g.t_out = g.t;
      break;
  }
  const std::int64_t hp = g.h + 2 * pad - g.kh;
  const std::int64_t wp = g.w + 2 * pad - g.kw;
  if (hp < 0) throw DimensionError("conv3d kernel taller than padded input on axis 3");
  if (wp < 0) throw DimensionError("conv3d kernel wider than padded input on axis 4");
  g.h_out = hp / stride + 1;
  g.w_out = wp / stride + 1;
  return g;
}

std::int64_t Conv3dGeometry::source_frame(std::int64_t to, std::int64_t k) const {
  switch (mode) {
    case TemporalMode::Valid: return to + k;
    case TemporalMode::CausalReplicate: return std::max<std::int64_t>(0, to + k - (kt - 1));
    case TemporalMode::SameZero: {
      const std::int64_t s = to + k - (kt - 1) / 2;
      return (s < 0 || s >= t) ? -1 : s;
    }
  }
  return -1;
}

void init_deterministic_blas() { openblas_set_num_threads(1); }

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
          double* c, std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
          std::int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

namespace {

// col has shape [C_in*Kt*Kh*Kw, T'*H'*W'] for one sample.
template <typename T>
void im2col(const Conv3dGeometry& g, const T* x, T* col) {
  const std::int64_t plane = g.h * g.w;
  const std::int64_t out_plane = g.h_out * g.w_out;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    for (std::int64_t kt = 0; kt < g.kt; ++kt) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        for (std::int64_t kw = 0; kw < g.kw; ++kw, ++row) {
          T* dst_row = col + row * g.col_cols();
          for (std::int64_t to = 0; to < g.t_out; ++to) {
            T* dst = dst_row + to * out_plane;
            const std::int64_t ts = g.source_frame(to, kt);
            if (ts < 0) {
              std::fill(dst, dst + out_plane, T{0});
              continue;
            }
            const T* src = x + (ci * g.t + ts) * plane;
            for (std::int64_t ho = 0; ho < g.h_out; ++ho) {
              const std::int64_t hi = ho * g.stride - g.pad + kh;
              T* d = dst + ho * g.w_out;
              if (hi < 0 || hi >= g.h) {
                std::fill(d, d + g.w_out, T{0});
                continue;
              }
              const T* s = src + hi * g.w;
              for (std::int64_t wo = 0; wo < g.w_out; ++wo) {
                const std::int64_t wi = wo * g.stride - g.pad + kw;
                d[wo] = (wi < 0 || wi >= g.w) ? T{0} : s[wi];
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const Conv3dGeometry& g, const double* col, double* gx) {
  const std::int64_t plane = g.h * g.w;
  const std::int64_t out_plane = g.h_out * g.w_out;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    for (std::int64_t kt = 0; kt < g.kt; ++kt) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        for (std::int64_t kw = 0; kw < g.kw; ++kw, ++row) {
          const double* src_row = col + row * g.col_cols();
          for (std::int64_t to = 0; to < g.t_out; ++to) {
            const std::int64_t ts = g.source_frame(to, kt);
            if (ts < 0) continue;
            const double* src = src_row + to * out_plane;
            double* dst = gx + (ci * g.t + ts) * plane;
            for (std::int64_t ho = 0; ho < g.h_out; ++ho) {
              const std::int64_t hi = ho * g.stride - g.pad + kh;
              if (hi < 0 || hi >= g.h) continue;
              const double* s = src + ho * g.w_out;
              double* d = dst + hi * g.w;
              for (std::int64_t wo = 0; wo < g.w_out; ++wo) {
                const std::int64_t wi = wo * g.stride - g.pad + kw;
                if (wi >= 0 && wi < g.w) d[wi] += s[wo];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride, std::int64_t pad,
                      TemporalMode mode) {
  const auto g = Conv3dGeometry::make(input.shape(), weight.shape(), stride, pad, mode);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out)) {
    throw DimensionError("conv3d bias must be [C_out]=" + std::to_string(g.c_out) + ", got " +
                         shape_str(bias->shape()));
  }
  BasicTensor<T> out(g.output_shape());
  const std::int64_t rows = g.col_rows();
  const std::int64_t cols = g.col_cols();
  std::vector<T> col(static_cast<std::size_t>(rows * cols));
  const std::int64_t in_sample = g.c_in * g.t * g.h * g.w;
  const std::int64_t out_sample = g.c_out * cols;
  for (std::int64_t n = 0; n < g.n; ++n) {
    im2col(g, input.ptr() + n * in_sample, col.data());
    T* y = out.ptr() + n * out_sample;
    if (bias) {
      for (std::int64_t co = 0; co < g.c_out; ++co) {
        std::fill(y + co * cols, y + (co + 1) * cols, (*bias)[co]);
      }
    }
    gemm(false, false, g.c_out, cols, rows, T{1}, weight.ptr(), rows, col.data(), cols,
         bias ? T{1} : T{0}, y, cols);
  }
  return out;
}

void conv3d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     std::int64_t stride, std::int64_t pad, TemporalMode mode, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias) {
  const auto g = Conv3dGeometry::make(input.shape(), weight.shape(), stride, pad, mode);
  if (grad_out.shape() != g.output_shape()) {
    throw DimensionError("conv3d_backward grad shape " + shape_str(grad_out.shape()) +
                         " != output shape " + shape_str(g.output_shape()));
  }
  const std::int64_t rows = g.col_rows();
  const std::int64_t cols = g.col_cols();
  const std::int64_t in_sample = g.c_in * g.t * g.h * g.w;
  const std::int64_t out_sample = g.c_out * cols;
  std::vector<double> col(static_cast<std::size_t>(rows * cols));
  if (grad_input) *grad_input = Tensor(input.shape());
  if (grad_weight) *grad_weight = Tensor(weight.shape());
  if (grad_bias) *grad_bias = Tensor(Shape{g.c_out});
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* gy = grad_out.ptr() + n * out_sample;
    if (grad_weight) {
      im2col(g, input.ptr() + n * in_sample, col.data());
      gemm(false, true, g.c_out, rows, cols, 1.0, gy, cols, col.data(), cols, 1.0,
           grad_weight->ptr(), rows);
    }
    if (grad_input) {
      gemm(true, false, rows, cols, g.c_out, 1.0, weight.ptr(), rows, gy, cols, 0.0, col.data(),
           cols);
      col2im(g, col.data(), grad_input->ptr() + n * in_sample);
    }
    if (grad_bias) {
      for (std::int64_t co = 0; co < g.c_out; ++co) {
        double s = 0.0;
        for (std::int64_t p = 0; p < cols; ++p) s += gy[co * cols + p];
        (*grad_bias)[co] += s;
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv3d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride,
                                std::int64_t pad, TemporalMode mode) {
  const auto g = Conv3dGeometry::make(input.shape(), weight.shape(), stride, pad, mode);
  BasicTensor<T> out(g.output_shape());
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t co = 0; co < g.c_out; ++co)
      for (std::int64_t to = 0; to < g.t_out; ++to)
        for (std::int64_t ho = 0; ho < g.h_out; ++ho)
          for (std::int64_t wo = 0; wo < g.w_out; ++wo) {
            double acc = bias ? static_cast<double>((*bias)[co]) : 0.0;
            for (std::int64_t ci = 0; ci < g.c_in; ++ci)
              for (std::int64_t kt = 0; kt < g.kt; ++kt) {
                std::int64_t ts = 0;
                if (mode == TemporalMode::Valid) {
                  ts = to + kt;
                } else if (mode == TemporalMode::CausalReplicate) {
                  ts = to + kt - (g.kt - 1);
                  if (ts < 0) ts = 0;
                } else {
                  ts = to + kt - (g.kt - 1) / 2;
                  if (ts < 0 || ts >= g.t) continue;
                }
                for (std::int64_t kh = 0; kh < g.kh; ++kh) {
                  const std::int64_t hi = ho * stride - pad + kh;
                  if (hi < 0 || hi >= g.h) continue;
                  for (std::int64_t kw = 0; kw < g.kw; ++kw) {
                    const std::int64_t wi = wo * stride - pad + kw;
                    if (wi < 0 || wi >= g.w) continue;
                    acc += static_cast<double>(input.at({n, ci, ts, hi, wi})) *
                           static_cast<double>(weight.at({co, ci, kt, kh, kw}));
                  }
                }
              }
            out.at({n, co, to, ho, wo}) = static_cast<T>(acc);
          }
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride, std::int64_t pad) {
  if (input.rank() != 4) throw DimensionError("conv2d input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (weight.rank() != 4) {
    throw DimensionError("conv2d weight must be [C_out,C_in,Kh,Kw], got " + shape_str(weight.shape()));
  }
  const auto& s = input.shape();
  const auto& k = weight.shape();
  auto x5 = input.reshaped({s[0], s[1], 1, s[2], s[3]});
  auto w5 = weight.reshaped({k[0], k[1], 1, k[2], k[3]});
  auto y = conv3d(x5, w5, bias, stride, pad, TemporalMode::Valid);
  const auto& o = y.shape();
  return y.reshaped({o[0], o[1], o[3], o[4]});
}

template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                const BasicTensor<T>& running_var, double eps) {
  if (input.rank() < 2) throw DimensionError("batch_norm input needs a channel axis 1");
  const std::int64_t c = input.dim(1);
  for (const auto* p : {&gamma, &beta, &running_mean, &running_var}) {
    if (p->numel() != c) {
      throw DimensionError("batch_norm parameter length " + std::to_string(p->numel()) +
                           " != channel axis 1 length " + std::to_string(c));
    }
  }
  const std::int64_t n = input.dim(0);
  const std::int64_t inner = input.numel() / (n * c);
  BasicTensor<T> out(input.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double var = static_cast<double>(running_var[ch]) + eps;
    if (!(var > 0.0)) throw NumericError("batch_norm sigma is not positive on channel " + std::to_string(ch));
    const double sigma = std::sqrt(var);
    const double scale = static_cast<double>(gamma[ch]) / sigma;
    const double shift = static_cast<double>(beta[ch]) - scale * static_cast<double>(running_mean[ch]);
    for (std::int64_t b = 0; b < n; ++b) {
      const T* x = input.ptr() + (b * c + ch) * inner;
      T* y = out.ptr() + (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        y[i] = static_cast<T>(scale * static_cast<double>(x[i]) + shift);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_last(const BasicTensor<T>& input) {
  const std::int64_t len = input.dim(-1);
  const std::int64_t rows = input.numel() / len;
  BasicTensor<T> out(input.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = input.ptr() + r * len;
    T* y = out.ptr() + r * len;
    T m = *std::max_element(x, x + len);
    double s = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      y[i] = static_cast<T>(std::exp(static_cast<double>(x[i] - m)));
      s += static_cast<double>(y[i]);
    }
    for (std::int64_t i = 0; i < len; ++i) y[i] = static_cast<T>(static_cast<double>(y[i]) / s);
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias) {
  if (weight.rank() != 2) throw DimensionError("linear weight must be [D_out, D_in]");
  const std::int64_t d_in = weight.dim(1);
  const std::int64_t d_out = weight.dim(0);
  if (input.dim(-1) != d_in) {
    throw DimensionError("linear inner dimension mismatch: input last axis " +
                         std::to_string(input.dim(-1)) + " vs weight " + std::to_string(d_in));
  }
  if (bias && bias->numel() != d_out) throw DimensionError("linear bias must be [D_out]");
  Shape os = input.shape();
  os.back() = d_out;
  BasicTensor<T> out(os);
  const std::int64_t rows = input.numel() / d_in;
  if (bias) {
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy(bias->ptr(), bias->ptr() + d_out, out.ptr() + r * d_out);
  }
  gemm(false, true, rows, d_out, d_in, T{1}, input.ptr(), d_in, weight.ptr(), d_in,
       bias ? T{1} : T{0}, out.ptr(), d_out);
  return out;
}

#define TDCNET_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const std::type_identity_t<BasicTensor<T>>*, std::int64_t, std::int64_t,             \
                                 TemporalMode);                                                 \
  template BasicTensor<T> conv3d_reference(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const std::type_identity_t<BasicTensor<T>>*, std::int64_t, std::int64_t,   \
                                           TemporalMode);                                       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const std::type_identity_t<BasicTensor<T>>*, std::int64_t, std::int64_t);            \
  template BasicTensor<T> batch_norm_infer(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const BasicTensor<T>&, double);                      \
  template BasicTensor<T> softmax_last(const BasicTensor<T>&);                                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const std::type_identity_t<BasicTensor<T>>*);

TDCNET_INSTANTIATE(double)
TDCNET_INSTANTIATE(float)

#undef TDCNET_INSTANTIATE

}  // namespace tdcnet
