#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgcnn/tensor.hpp"

namespace dgcnn {

/// One cosine cycle spanning the whole run, no warm restarts:
/// lr(e) = lr_min + (lr_max - lr_min) (1 + cos(pi e / E)) / 2.
inline double cosine_lr(int epoch, int total_epochs, double lr_max = 0.1, double lr_min = 0.001) {
  if (total_epochs < 1) throw ParameterError("cosine_lr: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs)
    throw ParameterError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(total_epochs) +
                         "]");
  double c = std::cos(3.14159265358979323846 * static_cast<double>(epoch) / static_cast<double>(total_epochs));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + c);
}

/// SGD with classical momentum: v <- m v + g, p <- p - lr v.
template <typename S>
class SgdMomentum {
 public:
  double lr_max = 0.1;
  double lr_min = 0.001;
  double momentum = 0.9;
  int total_epochs = 250;
  int epoch = 0;

  double lr() const { return cosine_lr(epoch, total_epochs, lr_max, lr_min); }

  /// Applies one update over (parameter, gradient) pairs.  Pairs must arrive
  /// in the same order every step; velocity slots are keyed positionally.
  void step(const std::vector<std::pair<Tensor<S>*, const Tensor<S>*>>& param_grads, double learning_rate) {
    if (velocity_.empty()) {
      velocity_.reserve(param_grads.size());
      for (const auto& [p, g] : param_grads) velocity_.push_back(Tensor<S>::zeros(p->shape()));
    }
    if (velocity_.size() != param_grads.size()) throw ContractError("sgd: parameter set changed between steps");
    const S m = static_cast<S>(momentum);
    const S lr = static_cast<S>(learning_rate);
    for (std::size_t i = 0; i < param_grads.size(); ++i) {
      auto [p, g] = param_grads[i];
      if (!g->all_finite())
        throw NumericError("sgd: non-finite gradient for parameter " + std::to_string(i) + " with shape " +
                           shape_str(p->shape()));
      if (!p->same_shape(*g)) throw DimensionError("sgd: parameter/gradient shape mismatch");
      velocity_[i].vec() = m * velocity_[i].vec() + g->vec();
      p->vec() -= lr * velocity_[i].vec();
    }
  }

 private:
  std::vector<Tensor<S>> velocity_;
};

}  // namespace dgcnn
