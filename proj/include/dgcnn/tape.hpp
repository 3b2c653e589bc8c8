#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "dgcnn/error.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn {

/// Handle to a value recorded on a Tape.
struct Var {
  Index id = -1;
  bool valid() const { return id >= 0; }
};

template <typename S>
class Tape;

/// Result of a backward pass: one gradient slot per tape variable.
/// Variables the loss never reached yield zeros.
template <typename S>
class Gradients {
 public:
  const Tensor<S>& wrt(Var v) const {
    check(v);
    auto& slot = slots_[static_cast<std::size_t>(v.id)];
    if (!slot) slot = Tensor<S>::zeros(shapes_[static_cast<std::size_t>(v.id)]);
    return *slot;
  }

  bool touched(Var v) const {
    check(v);
    return slots_[static_cast<std::size_t>(v.id)].has_value();
  }

  /// Adds g into the slot for v unless v does not require gradients.
  void accumulate(Var v, Tensor<S>&& g) {
    check(v);
    if (!requires_[static_cast<std::size_t>(v.id)]) return;
    auto& slot = slots_[static_cast<std::size_t>(v.id)];
    if (!slot) {
      slot = std::move(g);
    } else {
      if (slot->numel() != g.numel()) throw ContractError("gradient accumulation shape mismatch");
      slot->vec() += g.vec();
    }
  }

  bool requires_grad(Var v) const {
    check(v);
    return requires_[static_cast<std::size_t>(v.id)];
  }

 private:
  friend class Tape<S>;
  Gradients(std::vector<Shape> shapes, std::vector<bool> flags)
      : shapes_(std::move(shapes)), requires_(std::move(flags)), slots_(shapes_.size()) {}

  void check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= slots_.size()) throw IndexError("gradients: unknown variable");
  }

  const Tensor<S>* peek(Var v) const {
    const auto& slot = slots_[static_cast<std::size_t>(v.id)];
    return slot ? &*slot : nullptr;
  }

  std::vector<Shape> shapes_;
  std::vector<bool> requires_;
  mutable std::vector<std::optional<Tensor<S>>> slots_;
};

/// Wengert-list tape.  Nodes are appended in execution order, which is a
/// topological order by construction; backward walks them once in reverse.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<S>& out_grad, Gradients<S>& sink)>;

  static constexpr double kNoMargin = std::numeric_limits<double>::infinity();

  struct Node {
    const char* op;
    std::vector<Var> inputs;
    Var output;
    double margin;  // distance to the nearest non-differentiable point seen in forward
    BackwardFn backward;
  };

  /// Registers a leaf value.  Gradient participation follows the tensor's
  /// requires_grad flag.
  Var input(Tensor<S> value) {
    if (!value.all_finite()) throw NumericError("tape input holds non-finite values");
    return push(std::move(value));
  }

  /// Leaf that never receives gradients.
  Var constant(Tensor<S> value) {
    value.set_requires_grad(false);
    return input(std::move(value));
  }

  const Tensor<S>& value(Var v) const {
    check(v);
    return values_[static_cast<std::size_t>(v.id)];
  }

  bool requires_grad(Var v) const { return value(v).requires_grad(); }

  Index num_vars() const { return static_cast<Index>(values_.size()); }
  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Smallest conditioning margin over all recorded nodes (max ties,
  /// activation kinks).  Finite-difference harnesses use it to resample
  /// inputs that sit too close to a non-differentiable point.
  double min_margin() const {
    double m = kNoMargin;
    for (const auto& n : nodes_) m = std::min(m, n.margin);
    return m;
  }

  /// Records a conditioning margin for a discrete selection made outside the
  /// differentiable graph (k-NN neighbor choice).  Such nodes carry no value
  /// and no backward.
  void note_margin(const char* op, double margin) {
    nodes_.push_back(Node{op, {}, Var{}, margin, nullptr});
  }

  /// Records the result of a primitive.  `fn` may be empty for values that
  /// need no node (all inputs constant).
  Var emit(const char* op, std::vector<Var> inputs, Tensor<S> value, double margin, BackwardFn fn) {
    bool needs_grad = false;
    for (Var in : inputs) {
      check(in);
      needs_grad = needs_grad || values_[static_cast<std::size_t>(in.id)].requires_grad();
    }
    if (!value.all_finite()) throw NumericError(std::string(op) + ": produced non-finite values");
    value.set_requires_grad(needs_grad);
    Var out = push(std::move(value));
    if (needs_grad && fn) nodes_.push_back(Node{op, std::move(inputs), out, margin, std::move(fn)});
    return out;
  }

  /// Reverse-mode sweep from a scalar loss.
  Gradients<S> backward(Var loss) {
    const Tensor<S>& lv = value(loss);
    if (lv.numel() != 1) throw ContractError("backward: loss must be a scalar tensor, got " + shape_str(lv.shape()));
    std::vector<Shape> shapes;
    std::vector<bool> flags;
    shapes.reserve(values_.size());
    flags.reserve(values_.size());
    for (const auto& t : values_) {
      shapes.push_back(t.shape());
      flags.push_back(t.requires_grad());
    }
    Gradients<S> grads(std::move(shapes), std::move(flags));
    if (lv.requires_grad()) grads.accumulate(loss, Tensor<S>::ones(lv.shape()));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->backward) continue;  // margin-only note
      const Tensor<S>* gout = grads.peek(it->output);
      if (!gout) continue;  // loss does not depend on this node
      it->backward(*gout, grads);
    }
    return grads;
  }

 private:
  Var push(Tensor<S> value) {
    values_.push_back(std::move(value));
    return Var{static_cast<Index>(values_.size()) - 1};
  }

  void check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= values_.size())
      throw IndexError("tape: variable does not belong to this tape");
  }

  std::vector<Tensor<S>> values_;
  std::vector<Node> nodes_;
};

}  // namespace dgcnn
