// SPDX-License-Identifier: Apache-2.0
//
// Small parameterised layers built on the autograd ops.
#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>

#include "tdcnet/autograd.hpp"

namespace tdcnet {

using Rng = std::mt19937_64;

/// Receives every parameter and buffer of a module tree.
struct StateVisitor {
  std::function<void(const std::string&, Parameter&)> param;
  std::function<void(const std::string&, Tensor&)> buffer;
};

struct ForwardCtx {
  BnMode bn_mode = BnMode::Train;
  bool update_stats = true;
  double momentum = kBnMomentum;
};

/// Centered uniform with bound 1/sqrt(fan_in).
Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

class Conv3dLayer {
 public:
  Conv3dLayer() = default;
  Conv3dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t kt, std::int64_t k,
              std::int64_t stride, TemporalMode mode, bool with_bias, Rng& rng);

  Var forward(Var x);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::int64_t stride() const { return stride_; }
  std::int64_t pad() const { return pad_; }
  TemporalMode mode() const { return mode_; }

  Parameter weight;
  std::optional<Parameter> bias;

 private:
  std::int64_t stride_ = 1;
  std::int64_t pad_ = 0;
  TemporalMode mode_ = TemporalMode::CausalReplicate;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride,
              bool with_bias, Rng& rng);

  Var forward(Var x);
  void visit(const std::string& prefix, const StateVisitor& v);
  std::int64_t stride() const { return stride_; }

  Parameter weight;
  std::optional<Parameter> bias;

 private:
  std::int64_t stride_ = 1;
  std::int64_t pad_ = 0;
};

class BatchNormLayer {
 public:
  explicit BatchNormLayer(std::int64_t channels = 1) : state(channels) {}
  Var forward(Var x, const ForwardCtx& ctx) {
    return ag::batch_norm(x, state, ctx.bn_mode, ctx.update_stats, ctx.momentum);
  }
  void visit(const std::string& prefix, const StateVisitor& v);

  BatchNormState state;
};

class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::int64_t d_in, std::int64_t d_out, Rng& rng, bool with_bias = true);
  Var forward(Var x);
  void visit(const std::string& prefix, const StateVisitor& v);

  Parameter weight;
  std::optional<Parameter> bias;
};

class LayerNormLayer {
 public:
  explicit LayerNormLayer(std::int64_t d = 1, bool with_shift = true);
  Var forward(Var x);
  void visit(const std::string& prefix, const StateVisitor& v);

  Parameter gamma;
  std::optional<Parameter> beta;
};

/// Tape handle for a parameter, registered on the tape of `like`.
inline Var use(Var like, Parameter& p) { return like.tape()->param(p); }

}  // namespace tdcnet
