// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/nn.hpp"

#include <cmath>

namespace tdcnet {

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

Conv3dLayer::Conv3dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t kt, std::int64_t k,
                         std::int64_t stride, TemporalMode mode, bool with_bias, Rng& rng)
    : weight(fan_in_uniform({c_out, c_in, kt, k, k}, c_in * kt * k * k, rng)),
      stride_(stride),
      pad_((k - 1) / 2),
      mode_(mode) {
  if (with_bias) bias = Parameter(fan_in_uniform({c_out}, c_in * kt * k * k, rng));
}

Var Conv3dLayer::forward(Var x) {
  std::optional<Var> b;
  if (bias) b = use(x, *bias);
  return ag::conv3d(x, use(x, weight), b, stride_, pad_, mode_);
}

void Conv3dLayer::visit(const std::string& prefix, const StateVisitor& v) {
  v.param(prefix + ".weight", weight);
  if (bias) v.param(prefix + ".bias", *bias);
}

Conv2dLayer::Conv2dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                         std::int64_t stride, bool with_bias, Rng& rng)
    : weight(fan_in_uniform({c_out, c_in, k, k}, c_in * k * k, rng)), stride_(stride), pad_((k - 1) / 2) {
  if (with_bias) bias = Parameter(fan_in_uniform({c_out}, c_in * k * k, rng));
}

Var Conv2dLayer::forward(Var x) {
  std::optional<Var> b;
  if (bias) b = use(x, *bias);
  return ag::conv2d(x, use(x, weight), b, stride_, pad_);
}

void Conv2dLayer::visit(const std::string& prefix, const StateVisitor& v) {
  v.param(prefix + ".weight", weight);
  if (bias) v.param(prefix + ".bias", *bias);
}

void BatchNormLayer::visit(const std::string& prefix, const StateVisitor& v) {
  v.param(prefix + ".gamma", state.gamma);
  v.param(prefix + ".beta", state.beta);
  v.buffer(prefix + ".running_mean", state.running_mean);
  v.buffer(prefix + ".running_var", state.running_var);
}

LinearLayer::LinearLayer(std::int64_t d_in, std::int64_t d_out, Rng& rng, bool with_bias)
    : weight(fan_in_uniform({d_out, d_in}, d_in, rng)) {
  if (with_bias) bias = Parameter(fan_in_uniform({d_out}, d_in, rng));
}

Var LinearLayer::forward(Var x) {
  std::optional<Var> b;
  if (bias) b = use(x, *bias);
  return ag::linear(x, use(x, weight), b);
}

void LinearLayer::visit(const std::string& prefix, const StateVisitor& v) {
  v.param(prefix + ".weight", weight);
  if (bias) v.param(prefix + ".bias", *bias);
}

LayerNormLayer::LayerNormLayer(std::int64_t d, bool with_shift) : gamma(Tensor(Shape{d}, 1.0)) {
  if (with_shift) beta = Parameter(Tensor(Shape{d}, 0.0));
}

Var LayerNormLayer::forward(Var x) {
  std::optional<Var> b;
  if (beta) b = use(x, *beta);
  return ag::layer_norm_last(x, use(x, gamma), b);
}

void LayerNormLayer::visit(const std::string& prefix, const StateVisitor& v) {
  v.param(prefix + ".gamma", gamma);
  if (beta) v.param(prefix + ".beta", *beta);
}

}  // namespace tdcnet
