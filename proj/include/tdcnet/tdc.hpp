// SPDX-License-Identifier: Apache-2.0
//
// Temporal difference convolution. Each variant is a 3D convolution whose
// temporal taps are fixed signed combinations of learnable 2D base kernels,
// so the layer is algebraically a sum of 2D convolutions over frame
// differences:
//
//   long-term   sum_t W_t * (F_K - F_t)       t = 1..K-1
//   short-term  sum_t W_t * (F_t - F_{t-1})   t = 2..K
//   mid-term    sum_t W_t * (F_t - F_{t-2})   t = 3..K
//
// Taps of every variant sum to zero over time, so a temporally constant input
// produces zero response. A TDCR module runs all three variants in parallel,
// batch-normalises each and sums them; at inference the whole module folds
// into one 3D convolution with bias.
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "tdcnet/metrics.hpp"
#include "tdcnet/nn.hpp"

namespace tdcnet::tdc {

enum class Variant { ShortTerm, MidTerm, LongTerm };

const char* to_string(Variant v);

/// Accepted temporal kernel sizes.
void check_temporal_kernel(std::int64_t kt);

/// Number of learnable base kernels: 4/3/4 for S/M/L at Kt = 5.
std::int64_t base_count(Variant v, std::int64_t kt);

/// coef[k][b]: weight of base b in temporal tap k (taps oldest to newest).
std::vector<std::vector<double>> tap_coefficients(Variant v, std::int64_t kt);

struct BranchParams {
  Variant variant = Variant::LongTerm;
  std::int64_t kt = 5;
  std::vector<Parameter> bases;  // each [C_out, C_in, Kh, Kw]
  BatchNormState bn;

  BranchParams() = default;
  BranchParams(Variant v, std::int64_t kt, std::vector<Tensor> base_weights);
  /// Random bases with fan-in uniform init and identity BN.
  static BranchParams random(Variant v, std::int64_t kt, std::int64_t c_in, std::int64_t c_out,
                             std::int64_t k, Rng& rng);
  void validate() const;
  std::int64_t c_out() const { return bases.front().value.dim(0); }
  std::int64_t c_in() const { return bases.front().value.dim(1); }
};

/// [C_out, C_in, Kt, Kh, Kw] kernel of a branch.
Tensor build_tdc_taps(const BranchParams& params);
/// Differentiable version; base weights enter the tape as parameters.
Var build_tdc_taps(Var like, BranchParams& params);

/// conv3d with the built taps, no bias.
Tensor tdc_forward_unified(const Tensor& input, const BranchParams& params, TemporalMode mode,
                           std::int64_t stride = 1);
/// Literal difference form: per temporal window, form each frame difference,
/// apply its base kernel as a direct 2D convolution and sum.
Tensor tdc_forward_explicit(const Tensor& input, const BranchParams& params, TemporalMode mode,
                            std::int64_t stride = 1);

struct FusedConv3d {
  Tensor weight;  // [C_out, C_in, Kt, Kh, Kw]
  Tensor bias;    // [C_out]
};

/// Folds inference-mode BN into a convolution: W' = g W / s, b' = g (b - m) / s + beta
/// with s = sqrt(var + eps). `bias` may be null (treated as zero).
FusedConv3d fuse_conv_bn(const Tensor& weight, const Tensor* bias, const BatchNormState& bn,
                         double eps = kBnEps);

struct TdcrConfig {
  std::int64_t c_in = 1;
  std::int64_t c_out = 1;
  std::int64_t kt = 5;
  std::int64_t k = 3;
  std::int64_t stride = 1;
  TemporalMode mode = TemporalMode::CausalReplicate;
};

/// Three parallel BN-normalised TDC branches (short, mid, long), optionally
/// replaced by their fused single convolution.
class TdcrModule {
 public:
  TdcrModule() = default;
  TdcrModule(const TdcrConfig& cfg, Rng& rng);
  TdcrModule(const TdcrConfig& cfg, std::array<BranchParams, 3> branches);

  const TdcrConfig& config() const { return cfg_; }
  BranchParams& branch(Variant v);
  const BranchParams& branch(Variant v) const;
  std::array<BranchParams, 3>& branches() { return branches_; }
  const std::array<BranchParams, 3>& branches() const { return branches_; }

  bool is_fused() const { return fused_.has_value(); }
  const FusedConv3d& fused() const { return *fused_; }
  /// Replaces the branches with their re-parameterised convolution.
  void set_fused(FusedConv3d f);

  Var forward(Var x, const ForwardCtx& ctx);
  /// Pre-BN output of one branch, for inspection.
  Var branch_forward(Var x, Variant v);

  void visit(const std::string& prefix, const StateVisitor& v);
  metrics::LayerDesc describe(const Shape& input, const std::string& name) const;

 private:
  TdcrConfig cfg_;
  std::array<BranchParams, 3> branches_;
  std::optional<Parameter> fused_weight_;
  std::optional<Parameter> fused_bias_;
  std::optional<FusedConv3d> fused_;
};

/// Branched forward on plain tensors (BN per `mode`; Train updates running stats).
Tensor tdcr_forward(const Tensor& input, TdcrModule& module, BnMode mode);

/// Inference-mode branched forward at either precision.
template <typename T>
BasicTensor<T> tdcr_forward_infer(const BasicTensor<T>& input, const TdcrModule& module);

/// Fused single-convolution forward at either precision.
template <typename T>
BasicTensor<T> fused_forward(const BasicTensor<T>& input, const FusedConv3d& fused,
                             const TdcrConfig& cfg);

FusedConv3d reparameterize(const TdcrModule& module);

/// Learnable parameter counts of the two forms.
std::int64_t branched_param_count(const TdcrConfig& cfg);
std::int64_t fused_param_count(const TdcrConfig& cfg);

namespace testing {
/// Mutation hook: flips the sign of the second short-term tap when enabled.
void set_short_term_sign_flip(bool enabled);
bool short_term_sign_flip();
}  // namespace testing

}  // namespace tdcnet::tdc
