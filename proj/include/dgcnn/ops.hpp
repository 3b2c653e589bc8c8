#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dgcnn/linalg.hpp"
#include "dgcnn/rng.hpp"
#include "dgcnn/settings.hpp"
#include "dgcnn/tape.hpp"

namespace dgcnn {

namespace detail {

struct AxisSplit {
  Index outer, axis, inner;
};

inline AxisSplit split_axis(const Shape& shape, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size()))
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

inline Shape drop_axis(const Shape& shape, Index axis) {
  Shape out;
  for (Index i = 0; i < static_cast<Index>(shape.size()); ++i)
    if (i != axis) out.push_back(shape[static_cast<std::size_t>(i)]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
Var matmul(Tape<S>& tape, Var a, Var b) {
  const Tensor<S>& A = tape.value(a);
  const Tensor<S>& B = tape.value(b);
  if (A.rank() != 2 || B.rank() != 2)
    throw DimensionError("matmul: operands must be rank 2, got " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  if (A.extent(1) != B.extent(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<S> out({A.extent(0), B.extent(1)});
  detail::matmul_into(out.matrix(), A.matrix(), B.matrix());
  return tape.emit("matmul", {a, b}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, a, b](const Tensor<S>& g, Gradients<S>& sink) {
                     const auto& av = t->value(a);
                     const auto& bv = t->value(b);
                     if (sink.requires_grad(a)) {
                       Tensor<S> da(av.shape());
                       detail::matmul_into(da.matrix(), g.matrix(), bv.matrix().transpose());
                       sink.accumulate(a, std::move(da));
                     }
                     if (sink.requires_grad(b)) {
                       Tensor<S> db(bv.shape());
                       detail::matmul_into(db.matrix(), av.matrix().transpose(), g.matrix());
                       sink.accumulate(b, std::move(db));
                     }
                   });
}

template <typename S>
Var add(Tape<S>& tape, Var a, Var b) {
  const Tensor<S>& A = tape.value(a);
  const Tensor<S>& B = tape.value(b);
  detail::require_same_shape("add", A, B);
  Tensor<S> out(A.shape(), A.vec() + B.vec());
  return tape.emit("add", {a, b}, std::move(out), Tape<S>::kNoMargin,
                   [a, b](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(a, Tensor<S>(g));
                     sink.accumulate(b, Tensor<S>(g));
                   });
}

template <typename S>
Var sub(Tape<S>& tape, Var a, Var b) {
  const Tensor<S>& A = tape.value(a);
  const Tensor<S>& B = tape.value(b);
  detail::require_same_shape("sub", A, B);
  Tensor<S> out(A.shape(), A.vec() - B.vec());
  return tape.emit("sub", {a, b}, std::move(out), Tape<S>::kNoMargin,
                   [a, b](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(a, Tensor<S>(g));
                     sink.accumulate(b, Tensor<S>(g.shape(), -g.vec()));
                   });
}

template <typename S>
Var mul(Tape<S>& tape, Var a, Var b) {
  const Tensor<S>& A = tape.value(a);
  const Tensor<S>& B = tape.value(b);
  detail::require_same_shape("mul", A, B);
  Tensor<S> out(A.shape(), A.vec().cwiseProduct(B.vec()));
  return tape.emit("mul", {a, b}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, a, b](const Tensor<S>& g, Gradients<S>& sink) {
                     if (sink.requires_grad(a))
                       sink.accumulate(a, Tensor<S>(g.shape(), g.vec().cwiseProduct(t->value(b).vec())));
                     if (sink.requires_grad(b))
                       sink.accumulate(b, Tensor<S>(g.shape(), g.vec().cwiseProduct(t->value(a).vec())));
                   });
}

template <typename S>
Var scale(Tape<S>& tape, Var x, S c) {
  const Tensor<S>& X = tape.value(x);
  Tensor<S> out(X.shape(), X.vec() * c);
  return tape.emit("scale", {x}, std::move(out), Tape<S>::kNoMargin,
                   [x, c](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, Tensor<S>(g.shape(), g.vec() * c));
                   });
}

/// Broadcast-add a length-C vector to every row of an R x C matrix.
template <typename S>
Var add_rowvec(Tape<S>& tape, Var x, Var b) {
  const Tensor<S>& X = tape.value(x);
  const Tensor<S>& B = tape.value(b);
  if (X.rank() != 2 || B.numel() != X.extent(1))
    throw DimensionError("add_rowvec: " + shape_str(X.shape()) + " + " + shape_str(B.shape()));
  Tensor<S> out(X.shape());
  out.matrix() = X.matrix().rowwise() + B.matrix().row(0);
  return tape.emit("add_rowvec", {x, b}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, b](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, Tensor<S>(g));
                     if (sink.requires_grad(b)) {
                       Tensor<S> db(t->value(b).shape());
                       db.matrix().row(0) = detail::column_sums(g.matrix());
                       sink.accumulate(b, std::move(db));
                     }
                   });
}

/// Scale each row of an R x C matrix by the matching entry of a length-R
/// vector (used for Gaussian-kernel edge weighting).
template <typename S>
Var mul_colvec(Tape<S>& tape, Var x, Var w) {
  const Tensor<S>& X = tape.value(x);
  const Tensor<S>& W = tape.value(w);
  if (X.rank() != 2 || W.numel() != X.extent(0))
    throw DimensionError("mul_colvec: " + shape_str(X.shape()) + " * " + shape_str(W.shape()));
  Tensor<S> out(X.shape());
  for (Index r = 0; r < X.extent(0); ++r) out.matrix().row(r) = X.matrix().row(r) * W[r];
  return tape.emit("mul_colvec", {x, w}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, w](const Tensor<S>& g, Gradients<S>& sink) {
                     const auto& xv = t->value(x);
                     const auto& wv = t->value(w);
                     if (sink.requires_grad(x)) {
                       Tensor<S> dx(xv.shape());
                       for (Index r = 0; r < dx.extent(0); ++r) dx.matrix().row(r) = g.matrix().row(r) * wv[r];
                       sink.accumulate(x, std::move(dx));
                     }
                     if (sink.requires_grad(w)) {
                       Tensor<S> dw(wv.shape());
                       dw.vec() = g.matrix().cwiseProduct(xv.matrix()).rowwise().sum();
                       sink.accumulate(w, std::move(dw));
                     }
                   });
}

template <typename S>
Var exp(Tape<S>& tape, Var x) {
  const Tensor<S>& X = tape.value(x);
  Tensor<S> out(X.shape(), X.vec().array().exp().matrix());
  Tensor<S> saved = out;  // d exp = exp
  return tape.emit("exp", {x}, std::move(out), Tape<S>::kNoMargin,
                   [x, saved = std::move(saved)](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, Tensor<S>(g.shape(), g.vec().cwiseProduct(saved.vec())));
                   });
}

/// max(x, slope * x).  slope in [0, 1); slope 0 is exact ReLU.  The margin
/// reported to the tape is the distance of the nearest input to the kink.
template <typename S>
Var leaky_relu(Tape<S>& tape, Var x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0))
    throw ParameterError("leaky_relu: slope must lie in [0,1), got " + std::to_string(slope));
  const Tensor<S>& X = tape.value(x);
  const S a = static_cast<S>(slope);
  Tensor<S> out(X.shape(), X.vec().cwiseMax(a * X.vec()));  // a < 1 makes this exactly max(x, ax)
  double margin = X.numel() ? static_cast<double>(X.vec().cwiseAbs().minCoeff()) : Tape<S>::kNoMargin;
  return tape.emit("leaky_relu", {x}, std::move(out), margin,
                   [t = &tape, x, a](const Tensor<S>& g, Gradients<S>& sink) {
                     const auto& xv = t->value(x);
                     Tensor<S> dx(g.shape());
                     dx.vec() = (xv.vec().array() > S(0)).select(g.vec().array(), a * g.vec().array());
                     sink.accumulate(x, std::move(dx));
                   });
}

template <typename S>
Var reshape(Tape<S>& tape, Var x, Shape shape) {
  const Tensor<S>& X = tape.value(x);
  Tensor<S> out = X.reshaped(std::move(shape));
  return tape.emit("reshape", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, g.reshaped(t->value(x).shape()));
                   });
}

template <typename S>
Var concat(Tape<S>& tape, std::span<const Var> parts, Index axis) {
  if (parts.empty()) throw ParameterError("concat: no parts");
  const Tensor<S>& first = tape.value(parts[0]);
  Shape out_shape = first.shape();
  auto split = detail::split_axis(first.shape(), axis);
  Index total_axis = 0;
  std::vector<Index> extents;
  for (Var p : parts) {
    const Tensor<S>& t = tape.value(p);
    if (t.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
    for (Index d = 0; d < t.rank(); ++d)
      if (d != axis && t.extent(d) != first.extent(d))
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(d));
    extents.push_back(t.extent(axis));
    total_axis += t.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total_axis;
  Tensor<S> out(out_shape);
  Index offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor<S>& t = tape.value(parts[pi]);
    Index pa = extents[pi];
    for (Index o = 0; o < split.outer; ++o) {
      const S* src = t.data() + o * pa * split.inner;
      S* dst = out.data() + (o * total_axis + offset) * split.inner;
      std::copy(src, src + pa * split.inner, dst);
    }
    offset += pa;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.emit("concat", inputs, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, inputs, axis, extents, split, total_axis](const Tensor<S>& g, Gradients<S>& sink) {
                     Index offset = 0;
                     for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
                       Index pa = extents[pi];
                       if (sink.requires_grad(inputs[pi])) {
                         Tensor<S> dp(t->value(inputs[pi]).shape());
                         for (Index o = 0; o < split.outer; ++o) {
                           const S* src = g.data() + (o * total_axis + offset) * split.inner;
                           S* dst = dp.data() + o * pa * split.inner;
                           std::copy(src, src + pa * split.inner, dst);
                         }
                         sink.accumulate(inputs[pi], std::move(dp));
                       }
                       offset += pa;
                     }
                   });
}

template <typename S>
Var concat(Tape<S>& tape, std::initializer_list<Var> parts, Index axis) {
  return concat(tape, std::span<const Var>(parts.begin(), parts.size()), axis);
}

template <typename S>
Var sum_over_axis(Tape<S>& tape, Var x, Index axis) {
  const Tensor<S>& X = tape.value(x);
  auto split = detail::split_axis(X.shape(), axis);
  Tensor<S> out(detail::drop_axis(X.shape(), axis));
  for (Index o = 0; o < split.outer; ++o)
    for (Index j = 0; j < split.axis; ++j) {
      const S* src = X.data() + (o * split.axis + j) * split.inner;
      S* dst = out.data() + o * split.inner;
      for (Index i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  return tape.emit("sum_over_axis", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, split](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dx(t->value(x).shape());
                     for (Index o = 0; o < split.outer; ++o)
                       for (Index j = 0; j < split.axis; ++j) {
                         const S* src = g.data() + o * split.inner;
                         S* dst = dx.data() + (o * split.axis + j) * split.inner;
                         std::copy(src, src + split.inner, dst);
                       }
                     sink.accumulate(x, std::move(dx));
                   });
}

template <typename S>
struct MaxReduce {
  Var values;
  std::vector<Index> argmax;  // position along the reduced axis, one per output element
};

/// Channel-wise max along `axis`.  Ties resolve to the lowest index and the
/// backward pass routes the gradient only to the recorded argmax element.
template <typename S>
MaxReduce<S> max_over_axis(Tape<S>& tape, Var x, Index axis) {
  const Tensor<S>& X = tape.value(x);
  auto split = detail::split_axis(X.shape(), axis);
  if (split.axis < 1) throw DimensionError("max_over_axis: empty axis");
  Tensor<S> out(detail::drop_axis(X.shape(), axis));
  std::vector<Index> argmax(static_cast<std::size_t>(split.outer * split.inner));
  double margin = Tape<S>::kNoMargin;
  for (Index o = 0; o < split.outer; ++o)
    for (Index i = 0; i < split.inner; ++i) {
      S best = X.data()[(o * split.axis + 0) * split.inner + i];
      S second = std::numeric_limits<S>::lowest();
      Index best_j = 0;
      for (Index j = 1; j < split.axis; ++j) {
        S v = X.data()[(o * split.axis + j) * split.inner + i];
        if (v > best) {
          second = best;
          best = v;
          best_j = j;
        } else {
          second = std::max(second, v);
        }
      }
      out.data()[o * split.inner + i] = best;
      argmax[static_cast<std::size_t>(o * split.inner + i)] = best_j;
      // an exact tie is a structural duplicate (the same value gathered
      // twice moves as one under perturbation); only a small positive gap
      // marks a genuine near-tie for finite-difference harnesses
      double gap = static_cast<double>(best - second);
      if (split.axis > 1 && gap > 0.0) margin = std::min(margin, gap);
    }
  Var values = tape.emit("max_over_axis", {x}, std::move(out), margin,
                         [t = &tape, x, split, argmax](const Tensor<S>& g, Gradients<S>& sink) {
                           Tensor<S> dx(t->value(x).shape());
                           for (Index o = 0; o < split.outer; ++o)
                             for (Index i = 0; i < split.inner; ++i) {
                               Index j = argmax[static_cast<std::size_t>(o * split.inner + i)];
                               dx.data()[(o * split.axis + j) * split.inner + i] = g.data()[o * split.inner + i];
                             }
                           sink.accumulate(x, std::move(dx));
                         });
  return {values, std::move(argmax)};
}

/// Max over consecutive groups of `group` rows: (G*group) x C -> G x C.
/// Same reduction as max_over_axis on the {G, group, C} view, without
/// materializing the reshape.
template <typename S>
MaxReduce<S> max_over_row_groups(Tape<S>& tape, Var x, Index group) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2 || group < 1 || X.extent(0) % group != 0)
    throw DimensionError("max_over_row_groups: rows not divisible into groups of " + std::to_string(group));
  detail::AxisSplit split{X.extent(0) / group, group, X.extent(1)};
  Tensor<S> out({split.outer, split.inner});
  std::vector<Index> argmax(static_cast<std::size_t>(split.outer * split.inner));
  double margin = Tape<S>::kNoMargin;
  auto xm = X.matrix();
  using RowArray = Eigen::Array<S, 1, Eigen::Dynamic>;
  using IdxArray = Eigen::Array<Index, 1, Eigen::Dynamic>;
  RowArray best(split.inner), second(split.inner);
  IdxArray arg(split.inner);
  for (Index o = 0; o < split.outer; ++o) {
    best = xm.row(o * split.axis).array();
    second.setConstant(std::numeric_limits<S>::lowest());
    arg.setZero();
    for (Index j = 1; j < split.axis; ++j) {
      RowArray v = xm.row(o * split.axis + j).array();
      auto better = v > best;
      second = better.select(best, second.max(v));
      arg = better.select(IdxArray::Constant(split.inner, j), arg);
      best = better.select(v, best);
    }
    out.matrix().row(o) = best.matrix();
    for (Index i = 0; i < split.inner; ++i) {
      argmax[static_cast<std::size_t>(o * split.inner + i)] = arg[i];
      double gap = static_cast<double>(best[i] - second[i]);
      if (split.axis > 1 && gap > 0.0) margin = std::min(margin, gap);
    }
  }
  Var values = tape.emit("max_over_row_groups", {x}, std::move(out), margin,
                         [t = &tape, x, split, argmax](const Tensor<S>& g, Gradients<S>& sink) {
                           Tensor<S> dx(t->value(x).shape());
                           for (Index o = 0; o < split.outer; ++o)
                             for (Index i = 0; i < split.inner; ++i) {
                               Index j = argmax[static_cast<std::size_t>(o * split.inner + i)];
                               dx.data()[(o * split.axis + j) * split.inner + i] = g.data()[o * split.inner + i];
                             }
                           sink.accumulate(x, std::move(dx));
                         });
  return {values, std::move(argmax)};
}

/// Sum over consecutive groups of `group` rows: (G*group) x C -> G x C.
template <typename S>
Var sum_over_row_groups(Tape<S>& tape, Var x, Index group) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2 || group < 1 || X.extent(0) % group != 0)
    throw DimensionError("sum_over_row_groups: rows not divisible into groups of " + std::to_string(group));
  const Index groups = X.extent(0) / group, cols = X.extent(1);
  Tensor<S> out({groups, cols});
  auto xm = X.matrix();
  auto om = out.matrix();
  for (Index o = 0; o < groups; ++o)
    for (Index j = 0; j < group; ++j) om.row(o) += xm.row(o * group + j);
  return tape.emit("sum_over_row_groups", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, group](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dx(t->value(x).shape());
                     auto dm = dx.matrix();
                     auto gm = g.matrix();
                     for (Index r = 0; r < dm.rows(); ++r) dm.row(r) = gm.row(r / group);
                     sink.accumulate(x, std::move(dx));
                   });
}

template <typename S>
Var sum_all(Tape<S>& tape, Var x) {
  const Tensor<S>& X = tape.value(x);
  Tensor<S> out = Tensor<S>::scalar(X.vec().sum());
  return tape.emit("sum_all", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, Tensor<S>::full(t->value(x).shape(), g[0]));
                   });
}

/// out[r] = x[rows[r]] for a rank-2 x; backward scatter-adds.
template <typename S>
Var gather_rows(Tape<S>& tape, Var x, std::vector<Index> rows) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2) throw DimensionError("gather_rows: input must be rank 2");
  const Index R = X.extent(0), C = X.extent(1);
  for (Index r : rows)
    if (r < 0 || r >= R) throw IndexError("gather_rows: row " + std::to_string(r) + " out of [0," + std::to_string(R) + ")");
  Tensor<S> out({static_cast<Index>(rows.size()), C});
  auto xm = X.matrix();
  auto om = out.matrix();
  for (std::size_t i = 0; i < rows.size(); ++i) om.row(static_cast<Index>(i)) = xm.row(rows[i]);
  return tape.emit("gather_rows", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, rows = std::move(rows)](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dx(t->value(x).shape());
                     auto dm = dx.matrix();
                     auto gm = g.matrix();
                     for (std::size_t i = 0; i < rows.size(); ++i) dm.row(rows[i]) += gm.row(static_cast<Index>(i));
                     sink.accumulate(x, std::move(dx));
                   });
}

/// Contiguous column slice of a rank-2 tensor; backward zero-pads.
template <typename S>
Var slice_cols(Tape<S>& tape, Var x, Index start, Index count) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2) throw DimensionError("slice_cols: input must be rank 2");
  if (start < 0 || count < 1 || start + count > X.extent(1))
    throw DimensionError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") outside width " + std::to_string(X.extent(1)));
  Tensor<S> out({X.extent(0), count});
  out.matrix() = X.matrix().middleCols(start, count);
  return tape.emit("slice_cols", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, start, count](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dx(t->value(x).shape());
                     dx.matrix().middleCols(start, count) = g.matrix();
                     sink.accumulate(x, std::move(dx));
                   });
}

/// Inverted dropout: kept elements are scaled by 1/keep_prob so evaluation
/// is the identity.  The mask is drawn from `rng` in element order.
template <typename S>
Var dropout(Tape<S>& tape, Var x, double keep_prob, bool training, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ParameterError("dropout: keep_prob must lie in (0,1], got " + std::to_string(keep_prob));
  if (!training || keep_prob == 1.0) return x;
  const Tensor<S>& X = tape.value(x);
  Tensor<S> mask(X.shape());
  const S inv = static_cast<S>(1.0 / keep_prob);
  for (Index i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < keep_prob ? inv : S(0);
  Tensor<S> out(X.shape(), X.vec().cwiseProduct(mask.vec()));
  return tape.emit("dropout", {x}, std::move(out), Tape<S>::kNoMargin,
                   [x, mask = std::move(mask)](const Tensor<S>& g, Gradients<S>& sink) {
                     sink.accumulate(x, Tensor<S>(g.shape(), g.vec().cwiseProduct(mask.vec())));
                   });
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by max
/// subtraction.  Gradient is (softmax - onehot) / B.
template <typename S>
Var softmax_cross_entropy(Tape<S>& tape, Var logits, const std::vector<Index>& labels) {
  const Tensor<S>& L = tape.value(logits);
  if (L.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be rank 2");
  const Index B = L.extent(0), C = L.extent(1);
  if (static_cast<Index>(labels.size()) != B)
    throw DimensionError("softmax_cross_entropy: batch size mismatch");
  for (Index lab : labels)
    if (lab < 0 || lab >= C) throw IndexError("softmax_cross_entropy: label " + std::to_string(lab) + " outside [0," +
                                              std::to_string(C) + ")");
  Tensor<S> softmax({B, C});
  auto lm = L.matrix();
  auto pm = softmax.matrix();
  double loss = 0.0;
  for (Index b = 0; b < B; ++b) {
    S mx = lm.row(b).maxCoeff();
    pm.row(b) = (lm.row(b).array() - mx).exp().matrix();
    S z = pm.row(b).sum();
    pm.row(b) /= z;
    loss += std::log(static_cast<double>(z)) - static_cast<double>(lm(b, labels[static_cast<std::size_t>(b)]) - mx);
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(loss / static_cast<double>(B)));
  return tape.emit("softmax_cross_entropy", {logits}, std::move(out), Tape<S>::kNoMargin,
                   [logits, labels, softmax = std::move(softmax), B](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dl(softmax.shape(), softmax.vec());
                     auto dm = dl.matrix();
                     for (Index b = 0; b < B; ++b) dm(b, labels[static_cast<std::size_t>(b)]) -= S(1);
                     dl.vec() *= g[0] / static_cast<S>(B);
                     sink.accumulate(logits, std::move(dl));
                   });
}

/// Batch normalization over the rows of an R x C matrix.  Training mode
/// normalizes by biased batch statistics and folds them into the running
/// stats as running = momentum * running + (1 - momentum) * batch; eval mode
/// is the affine map defined by the running stats.
template <typename S>
Var batch_norm(Tape<S>& tape, Var x, Var gamma, Var beta, Tensor<S>& running_mean, Tensor<S>& running_var,
               bool training, double momentum, double eps) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2) throw DimensionError("batch_norm: input must be rank 2");
  const Index B = X.extent(0), C = X.extent(1);
  const Tensor<S>& G = tape.value(gamma);
  const Tensor<S>& Bt = tape.value(beta);
  if (G.numel() != C || Bt.numel() != C || running_mean.numel() != C || running_var.numel() != C)
    throw DimensionError("batch_norm: parameter width mismatch");
  if (!(eps > 0.0)) throw ParameterError("batch_norm: eps must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ParameterError("batch_norm: momentum outside [0,1]");
  if (training && B < 2)
    throw DimensionError("batch_norm: training with batch statistics needs B >= 2, got B=" + std::to_string(B));

  Eigen::RowVectorX<S> mean(C), var(C);
  double margin = Tape<S>::kNoMargin;
  if (training) {
    mean = detail::column_sums(X.matrix()) / static_cast<S>(B);
    var.setZero();
    for (Index b = 0; b < B; ++b) var += (X.matrix().row(b) - mean).cwiseAbs2();
    var /= static_cast<S>(B);
    running_mean.matrix().row(0) = static_cast<S>(momentum) * running_mean.matrix().row(0) +
                                   static_cast<S>(1.0 - momentum) * mean;
    running_var.matrix().row(0) = static_cast<S>(momentum) * running_var.matrix().row(0) +
                                  static_cast<S>(1.0 - momentum) * var;
    // near-zero batch variance makes the normalization extremely curved;
    // finite-difference harnesses treat it like a kink neighborhood
    margin = static_cast<double>(var.minCoeff());
  } else {
    mean = running_mean.matrix().row(0);
    var = running_var.matrix().row(0);
  }
  Eigen::RowVectorX<S> istd = (var.array() + static_cast<S>(eps)).rsqrt().matrix();
  Tensor<S> xhat({B, C});
  Tensor<S> out({B, C});
  {
    const S* gp = G.data();
    const S* bp = Bt.data();
    const S* mp = mean.data();
    const S* ip = istd.data();
    const S* xp = X.data();
    S* hp = xhat.data();
    S* op = out.data();
    for (Index b = 0; b < B; ++b, xp += C, hp += C, op += C)
      for (Index c = 0; c < C; ++c) {
        S h = (xp[c] - mp[c]) * ip[c];
        hp[c] = h;
        op[c] = h * gp[c] + bp[c];
      }
  }
  return tape.emit(
      "batch_norm", {x, gamma, beta}, std::move(out), margin,
      [t = &tape, x, gamma, beta, xhat = std::move(xhat), istd, training](const Tensor<S>& g, Gradients<S>& sink) {
        auto gm = g.matrix();
        auto xh = xhat.matrix();
        const Index B = gm.rows();
        const auto& gv = t->value(gamma);
        if (sink.requires_grad(beta)) {
          Tensor<S> db(t->value(beta).shape());
          db.matrix().row(0) = detail::column_sums(gm);
          sink.accumulate(beta, std::move(db));
        }
        if (sink.requires_grad(gamma)) {
          Tensor<S> dg(gv.shape());
          dg.matrix().row(0) = detail::column_dot_sums(gm, xh);
          sink.accumulate(gamma, std::move(dg));
        }
        if (!sink.requires_grad(x)) return;
        Tensor<S> dx(t->value(x).shape());
        const Index C = gm.cols();
        Eigen::RowVectorX<S> scale = gv.matrix().row(0).cwiseProduct(istd);
        const S* sp = scale.data();
        const S* gp = g.data();
        const S* hp = xhat.data();
        S* dp = dx.data();
        if (training) {
          Eigen::RowVectorX<S> mean_g = detail::column_sums(gm) / static_cast<S>(B);
          Eigen::RowVectorX<S> mean_gx = detail::column_dot_sums(gm, xh) / static_cast<S>(B);
          const S* mg = mean_g.data();
          const S* mgx = mean_gx.data();
          for (Index b = 0; b < B; ++b, gp += C, hp += C, dp += C)
            for (Index c = 0; c < C; ++c) dp[c] = (gp[c] - mg[c] - hp[c] * mgx[c]) * sp[c];
        } else {
          for (Index b = 0; b < B; ++b, gp += C, dp += C)
            for (Index c = 0; c < C; ++c) dp[c] = gp[c] * sp[c];
        }
        sink.accumulate(x, std::move(dx));
      });
}

}  // namespace dgcnn
