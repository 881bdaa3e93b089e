// SPDX-License-Identifier: Apache-2.0
//
// Windowed multi-head attention over [T, H, W] token grids with a learnable
// relative positional bias, and the tri-stream block that refines motion
// features: every stream gets regular + shifted window self-attention, then
// the motion stream queries the spatio-temporal stream (keys) and the spatial
// stream (values).
#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "tdcnet/metrics.hpp"
#include "tdcnet/nn.hpp"

namespace tdcnet::attn {

inline constexpr double kMaskedScore = -1e30;

struct WindowSpec {
  std::int64_t p = 5;        // temporal window
  std::int64_t m = 8;        // spatial window
  std::int64_t shift_t = 0;  // 0 or p/2
  std::int64_t shift_s = 0;  // 0 or m/2

  static WindowSpec regular(std::int64_t p, std::int64_t m) { return {p, m, 0, 0}; }
  static WindowSpec shifted(std::int64_t p, std::int64_t m) { return {p, m, p / 2, m / 2}; }
  std::int64_t tokens() const { return p * m * m; }
  bool is_shifted() const { return shift_t != 0 || shift_s != 0; }
};

/// Bookkeeping of one partition: padding, per-token source cell and the
/// attention mask of shifted windows.
struct WindowMeta {
  WindowSpec spec;
  std::int64_t t = 0, h = 0, w = 0;        // original extents
  std::int64_t pad_t = 0, pad_h = 0, pad_w = 0;
  std::int64_t windows_t = 0, windows_h = 0, windows_w = 0;
  /// source[window * L + token] = t*H*W + h*W + w of the original grid, -1 for padding.
  std::shared_ptr<const std::vector<std::int64_t>> source;
  /// Additive mask [nW, L, L] (0 or kMaskedScore); null when nothing is masked.
  std::shared_ptr<const Tensor> mask;

  std::int64_t num_windows() const { return windows_t * windows_h * windows_w; }
  std::int64_t tokens() const { return spec.tokens(); }
};

/// Validates the spec against the extents and builds the token layout.
/// Padding keys and pairs that wrapped across the cyclic shift are masked.
WindowMeta make_window_meta(std::int64_t t, std::int64_t h, std::int64_t w, const WindowSpec& spec);

/// x [T, C, H, W] -> tokens [nW, P*M*M, C] (zero rows for padding).
std::pair<Tensor, WindowMeta> window_partition(const Tensor& x, const WindowSpec& spec);
/// Exact inverse of window_partition.
Tensor window_reverse(const Tensor& tokens, const WindowMeta& meta);

/// Differentiable partition of a batched stream [N, C, T, H, W] -> [N*nW, L, C].
Var partition_stream(Var x, const WindowMeta& meta);
/// Inverse of partition_stream back to [N, C, T, H, W].
Var reverse_stream(Var tokens, const WindowMeta& meta, std::int64_t n, std::int64_t c);

/// Table row for every (query, key) token pair of a P x M x M window.
std::shared_ptr<const std::vector<std::int64_t>> relative_index(std::int64_t p, std::int64_t m);
inline std::int64_t relative_table_rows(std::int64_t p, std::int64_t m) {
  return (2 * p - 1) * (2 * m - 1) * (2 * m - 1);
}

/// Projections and bias table of one attention layer.
struct AttentionParams {
  std::int64_t dim = 0;
  std::int64_t heads = 1;
  std::int64_t p = 1, m = 1;
  LinearLayer q, k, v, out;
  Parameter bias_table;  // [(2P-1)(2M-1)^2, heads]
  std::shared_ptr<const std::vector<std::int64_t>> rel_index;

  AttentionParams() = default;
  AttentionParams(std::int64_t dim, std::int64_t heads, std::int64_t p, std::int64_t m, Rng& rng);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::int64_t head_dim() const { return dim / heads; }
};

/// B[h, a, b] = table[index(a, b), h].
Tensor relative_bias(const AttentionParams& params, const WindowSpec& spec);

/// softmax(Q K^T / sqrt(d_h) + B + mask) V per window and head. q, k, v are
/// already projected [G, L, d]; windows g use mask[g % nW]. Returns [G, L, d].
Var window_attention(Var q, Var k, Var v, Var bias_table,
                     std::shared_ptr<const std::vector<std::int64_t>> rel_index,
                     std::shared_ptr<const Tensor> mask, std::int64_t heads);

/// Softmax weights [G, heads, L, L] for inspection.
Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& table,
                         const std::vector<std::int64_t>& rel_index, const Tensor* mask,
                         std::int64_t heads);

/// Full self-attention on tokens [G, L, d]: project, attend, output-project.
Var self_attention(Var tokens, AttentionParams& params, std::shared_ptr<const Tensor> mask);
/// Cross-attention with queries from one token set and keys/values from others.
Var cross_attention(Var q_tokens, Var k_tokens, Var v_tokens, AttentionParams& params,
                    std::shared_ptr<const Tensor> mask);

/// Pre-norm residual window self-attention on a stream [N, C, T, H, W].
struct SelfAttentionBlock {
  LayerNormLayer norm;
  AttentionParams attn;
  WindowSpec spec;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(std::int64_t dim, std::int64_t heads, const WindowSpec& spec, Rng& rng);
  Var forward(Var x);
  void visit(const std::string& prefix, const StateVisitor& v);
};

enum class QueryStream { Tdcf, Stf, Sf };
QueryStream query_stream_from_string(const std::string& s);
const char* to_string(QueryStream q);

struct StageConfig {
  std::int64_t c_tdcf = 1, c_stf = 1, c_sf = 1;
  std::int64_t dim = 16;
  std::int64_t heads = 4;
  std::int64_t p = 5, m = 8;
  QueryStream query = QueryStream::Tdcf;
};

/// One stage of the tri-stream attention: 1x1 projections to a common width,
/// two self-attention passes per stream, then cross-attention. The 2D stream
/// [N, C, H, W] is replicated along T.
class TdcstaStage {
 public:
  TdcstaStage() = default;
  TdcstaStage(const StageConfig& cfg, Rng& rng);

  /// Returns STEF [N, dim, T, H, W] = F_query + CA(LN F_query, LN F_key, LN F_value).
  Var forward(Var tdcf, Var stf, Var sf);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::vector<metrics::LayerDesc> describe(std::int64_t n, std::int64_t t, std::int64_t h,
                                           std::int64_t w, const std::string& name) const;
  const StageConfig& config() const { return cfg_; }

 private:
  StageConfig cfg_;
  Conv3dLayer proj_tdcf_, proj_stf_;
  Conv2dLayer proj_sf_;
  std::vector<SelfAttentionBlock> sa_;  // [tdcf reg, tdcf shift, stf reg, stf shift, sf reg, sf shift]
  LayerNormLayer norm_q_, norm_k_, norm_v_;
  AttentionParams cross_;
};

/// Replicates [N, C, H, W] into [N, C, T, H, W].
Var repeat_time(Var x, std::int64_t t);

/// Applies each stage to its stream triple.
std::vector<Var> tdcsta_forward(std::vector<TdcstaStage>& stages, const std::vector<Var>& tdcf,
                                const std::vector<Var>& stf, const std::vector<Var>& sf);

}  // namespace tdcnet::attn
