#pragma once

#include <Eigen/Core>

#include "dgcnn/settings.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn::detail {

/// GEMM that is row-local in strict mode: a given row of `a` produces the
/// same output bits regardless of where it sits in the matrix, which makes
/// row permutations exactly equivariant.
template <typename Out, typename A, typename B>
void matmul_into(Out&& out, const A& a, const B& b) {
  if (strict_deterministic()) {
    for (Index i = 0; i < a.rows(); ++i) out.row(i).noalias() = a.row(i) * b;
  } else {
    out.noalias() = a * b;
  }
}

/// Column sums by sequential row accumulation.  Eigen's colwise() reductions
/// walk column-by-column, which on big row-major matrices re-reads the whole
/// buffer once per column.
template <typename M>
auto column_sums(const M& m) {
  using S = typename M::Scalar;
  Eigen::RowVectorX<S> acc = Eigen::RowVectorX<S>::Zero(m.cols());
  for (Index r = 0; r < m.rows(); ++r) acc += m.row(r);
  return acc;
}

template <typename M, typename N>
auto column_dot_sums(const M& a, const N& b) {
  using S = typename M::Scalar;
  Eigen::RowVectorX<S> acc = Eigen::RowVectorX<S>::Zero(a.cols());
  for (Index r = 0; r < a.rows(); ++r) acc += a.row(r).cwiseProduct(b.row(r));
  return acc;
}

}  // namespace dgcnn::detail
