// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward numeric kernels on plain tensors. The autograd layer
// wraps these; they carry no graph state.
#pragma once

#include <cstdint>
#include <type_traits>

#include "tdcnet/tensor.hpp"

namespace tdcnet {

/// How the temporal axis of a 3D convolution is padded.
///  - CausalReplicate: output t sees frames [t-Kt+1, t], frames before 0 are
///    replaced by frame 0. T' = T.
///  - Valid: no padding, T' = T - Kt + 1.
///  - SameZero: (Kt-1)/2 zero frames on both sides, Kt odd, T' = T.
enum class TemporalMode { CausalReplicate, Valid, SameZero };

const char* to_string(TemporalMode mode);
TemporalMode temporal_mode_from_string(const std::string& s);

struct Conv3dGeometry {
  std::int64_t n, c_in, t, h, w;
  std::int64_t c_out, kt, kh, kw;
  std::int64_t t_out, h_out, w_out;
  std::int64_t stride, pad;
  TemporalMode mode;

  static Conv3dGeometry make(const Shape& input, const Shape& weight, std::int64_t stride,
                             std::int64_t pad, TemporalMode mode);
  Shape output_shape() const { return {n, c_out, t_out, h_out, w_out}; }
  std::int64_t col_rows() const { return c_in * kt * kh * kw; }
  std::int64_t col_cols() const { return t_out * h_out * w_out; }
  /// Source frame for output frame `to` and tap `k`; -1 means a zero frame.
  std::int64_t source_frame(std::int64_t to, std::int64_t k) const;
};

/// 3D cross-correlation, input [N,C_in,T,H,W], weight [C_out,C_in,Kt,Kh,Kw].
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride, std::int64_t pad,
                      TemporalMode mode);

/// Gradients of conv3d. Any of the output pointers may be null.
void conv3d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     std::int64_t stride, std::int64_t pad, TemporalMode mode, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias);

/// Direct nested-loop conv3d with the same semantics. Slow; used as an oracle.
template <typename T>
BasicTensor<T> conv3d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride,
                                std::int64_t pad, TemporalMode mode);

/// 2D cross-correlation, input [N,C_in,H,W], weight [C_out,C_in,Kh,Kw].
/// Evaluated as conv3d with a single temporal tap.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias, std::int64_t stride, std::int64_t pad);

/// Per-channel affine normalization with fixed statistics (channel axis 1).
template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                const BasicTensor<T>& running_var, double eps);

template <typename T>
BasicTensor<T> softmax_last(const BasicTensor<T>& input);

/// Affine map over the last axis: weight [D_out, D_in], bias [D_out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias);

/// Row-major GEMM helper: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
          double* c, std::int64_t ldc);
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
          std::int64_t ldc);

/// Pins the BLAS backend to one thread so reductions run in a fixed order.
void init_deterministic_blas();

}  // namespace tdcnet
