#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgcnn/ops.hpp"

namespace dgcnn {

/// One dense layer: affine map plus optional batch norm and LeakyReLU.
/// Under batch norm the separate bias is omitted (the mean subtraction would
/// cancel it exactly; bn_beta plays that role).  bn_running_* are state, not
/// learnable parameters; bn_running_var stays strictly positive under the
/// running update.
template <typename S>
struct DenseLayerParams {
  Tensor<S> weight;  // in x out
  Tensor<S> bias;    // out; active only without batch norm
  Tensor<S> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
  bool use_bn = true;
  bool use_activation = true;
  double activation_slope = 0.2;  // 0 gives exact ReLU

  Index in_width() const { return weight.extent(0); }
  Index out_width() const { return weight.extent(1); }
  bool use_bias() const { return !use_bn; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight, true);
    if (use_bias()) f(prefix + ".bias", bias, true);
    if (use_bn) {
      f(prefix + ".bn_gamma", bn_gamma, true);
      f(prefix + ".bn_beta", bn_beta, true);
      f(prefix + ".bn_running_mean", bn_running_mean, false);
      f(prefix + ".bn_running_var", bn_running_var, false);
    }
  }
};

/// Glorot-uniform weights, zero bias, unit-gamma batch norm.
template <typename S>
DenseLayerParams<S> make_dense_layer(Index in, Index out, Rng& rng, bool use_bn = true, bool use_activation = true,
                                     double slope = 0.2) {
  DenseLayerParams<S> layer;
  S bound = static_cast<S>(std::sqrt(6.0 / static_cast<double>(in + out)));
  layer.weight = Tensor<S>::random_uniform({in, out}, bound, rng).set_requires_grad(true);
  layer.bias = Tensor<S>::zeros({out}).set_requires_grad(true);
  layer.bn_gamma = Tensor<S>::ones({out}).set_requires_grad(true);
  layer.bn_beta = Tensor<S>::zeros({out}).set_requires_grad(true);
  layer.bn_running_mean = Tensor<S>::zeros({out});
  layer.bn_running_var = Tensor<S>::ones({out});
  layer.use_bn = use_bn;
  layer.use_activation = use_activation;
  layer.activation_slope = slope;
  return layer;
}

/// Tape bindings for one dense layer's learnable tensors.
template <typename S>
struct BoundDense {
  DenseLayerParams<S>* params = nullptr;
  Var weight, bias, gamma, beta;
};

template <typename S>
BoundDense<S> bind(Tape<S>& tape, DenseLayerParams<S>& layer) {
  BoundDense<S> b;
  b.params = &layer;
  b.weight = tape.input(layer.weight);
  if (layer.use_bias()) b.bias = tape.input(layer.bias);
  if (layer.use_bn) {
    b.gamma = tape.input(layer.bn_gamma);
    b.beta = tape.input(layer.bn_beta);
  }
  return b;
}

struct BnOptions {
  double momentum = 0.9;
  double eps = 1e-5;
};

/// x (R x in) -> activation(batch_norm(x W [+ b])).
template <typename S>
Var dense_forward(Tape<S>& tape, const BoundDense<S>& layer, Var x, bool training, const BnOptions& bn = {}) {
  Var z = matmul(tape, x, layer.weight);
  if (layer.params->use_bias()) z = add_rowvec(tape, z, layer.bias);
  if (layer.params->use_bn)
    z = batch_norm(tape, z, layer.gamma, layer.beta, layer.params->bn_running_mean, layer.params->bn_running_var,
                   training, bn.momentum, bn.eps);
  if (layer.params->use_activation) z = leaky_relu(tape, z, layer.params->activation_slope);
  return z;
}

}  // namespace dgcnn
