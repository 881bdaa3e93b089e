// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over the handful of operations the
// detector needs. A Tape lives for one forward/backward pass; node ids grow
// monotonically, so replaying ids in descending order is a reverse
// topological traversal.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tdcnet/kernels.hpp"
#include "tdcnet/tensor.hpp"

namespace tdcnet {

/// Learnable tensor with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  /// Leaf tied to a parameter; its gradient is added to `p.grad` by backward().
  Var param(Parameter& p);

  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).requires_grad; }
  /// Null when no gradient reached the node.
  const Tensor* grad(Var v) const;
  /// Zero-initialised gradient buffer for in-place accumulation.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  /// Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  /// Node ids whose backward ran during the last backward(), in visit order.
  const std::vector<int>& last_visit_order() const { return visit_order_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::optional<Tensor> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<int> visit_order_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

enum class BnMode { Train, Infer };

/// Batch-norm parameters and running statistics for one layer.
struct BatchNormState {
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

  explicit BatchNormState(std::int64_t channels = 1);
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

namespace ag {

Var conv3d(Var input, Var weight, std::optional<Var> bias, std::int64_t stride, std::int64_t pad,
           TemporalMode mode);
Var conv2d(Var input, Var weight, std::optional<Var> bias, std::int64_t stride, std::int64_t pad);

/// Channel axis 1. In Train mode uses biased batch variance for normalisation
/// and, when `update_stats`, folds the unbiased estimate into the running stats.
Var batch_norm(Var input, BatchNormState& bn, BnMode mode, bool update_stats = true,
               double momentum = kBnMomentum, double eps = kBnEps);

/// out[k] = sum_b coef[k][b] * bases[b]; stacked on a new axis 2 of the
/// base shape [C_out, C_in, Kh, Kw], giving [C_out, C_in, K, Kh, Kw].
Var tap_combine(const std::vector<Var>& bases, const std::vector<std::vector<double>>& coef);

Var add(Var a, Var b);
Var add_n(const std::vector<Var>& xs);
/// x + b where b's element count divides x's and b is tiled across leading blocks.
Var add_tiled(Var x, Var b);
Var scale(Var x, double s);
Var silu(Var x);
Var softmax_last(Var x);
Var linear(Var x, Var weight, std::optional<Var> bias);
Var layer_norm_last(Var x, Var gamma, std::optional<Var> beta, double eps = 1e-5);
Var reshape(Var x, Shape shape);
/// Joins tensors that agree on every axis but `axis`.
Var concat(const std::vector<Var>& xs, std::int64_t axis);
/// Entries [start, start + len) of `axis`.
Var narrow(Var x, std::int64_t axis, std::int64_t start, std::int64_t len);

/// out[i] = x[index[i]] (0 where index[i] < 0). Backward scatter-adds.
Var gather(Var x, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape);

Var sum(Var x);
/// sum(x * w) for a constant weight tensor of the same shape.
Var weighted_sum(Var x, const Tensor& w);
/// Summed binary cross-entropy of probabilities p against targets y.
Var bce_sum(Var p, const Tensor& y);

}  // namespace ag

/// Which entries a sampled check visits (only used when max_entries > 0).
enum class EntrySelection {
  Random,   // uniformly sampled entries
  Largest,  // entries of largest |analytic| gradient
  Mixed,    // half largest, half random
};

/// Options for central-difference gradient verification.
struct GradCheckOptions {
  double step = 1e-5;
  /// Entries checked per tensor; 0 checks every entry.
  std::int64_t max_entries = 0;
  std::uint64_t seed = 0;
  EntrySelection selection = EntrySelection::Random;
  /// Tensorwise only: score each tensor against max(|a|, |cd|, |g|) where |g|
  /// is the norm of the whole gradient, for graphs where some tensors carry
  /// gradients below central-difference resolution.
  bool global_scale = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t entries_checked = 0;
  std::string worst;  // "tensor#index" of the worst entry
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds the graph with `build` (which must register every checked tensor
/// through the supplied leaves, in order) and compares analytic gradients to
/// central differences. Relative error per entry is
/// |a - cd| / max(|a|, |cd|, 1e-8).
GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    std::vector<Tensor> inputs, const GradCheckOptions& opts = {});

/// Same check over parameters the graph reaches through Tape::param.
GradCheckReport grad_check_params(const std::function<Var(Tape&)>& build,
                                  const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opts = {});

/// Per-tensor directional form: for every parameter tensor, the derivative
/// along its own normalised analytic gradient (|g| analytically) is compared
/// with a central difference along that direction. A tensor with an all-zero
/// analytic gradient is probed along a random direction instead, so a missing
/// gradient still shows up. `worst` names the tensor index.
GradCheckReport grad_check_tensorwise(const std::function<Var(Tape&)>& build,
                                      const std::vector<Parameter*>& params,
                                      const GradCheckOptions& opts = {});

/// Directional form: compares g.v with the central difference of the loss
/// along one random unit direction v spanning every entry of `params`.
/// Reported as a single entry with the same relative-error formula.
GradCheckReport grad_check_directional(const std::function<Var(Tape&)>& build,
                                       const std::vector<Parameter*>& params,
                                       const GradCheckOptions& opts = {});

}  // namespace tdcnet
