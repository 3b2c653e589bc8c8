#pragma once

#include <algorithm>
#include <atomic>
#include <ostream>
#include <vector>

#include "dgcnn/error.hpp"
#include "dgcnn/linalg.hpp"
#include "dgcnn/mesh.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn {

using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Directed k-NN graph: row i lists the neighbors of point i ordered by
/// (squared distance, index).  With self_loop the edge (i, i) occupies the
/// first slot and the remaining k-1 slots hold the nearest other points.
struct NeighborGraph {
  Index n = 0;
  Index k = 0;
  bool self_loop = true;
  IndexMatrix neighbors;  // n x k

  bool operator==(const NeighborGraph& other) const {
    return n == other.n && k == other.k && self_loop == other.self_loop && neighbors == other.neighbors;
  }
};

/// Test hook: flips the distance-tie rule from lowest-index to highest-index
/// so the verification suite can prove the k-NN oracle check has teeth.
inline std::atomic<bool>& knn_tie_fault_hook() {
  static std::atomic<bool> flag{false};
  return flag;
}

/// D[i][j] = squared Euclidean distance, computed via the expanded form
/// |a|^2 + |b|^2 - 2 a.b (one Gram product).  Point norms come from the Gram
/// diagonal so coincident points cancel exactly; rounding negatives are
/// clamped to zero, the upper triangle is mirrored for exact symmetry, and
/// the diagonal is exactly zero.
template <typename S>
PointMatrix<S> pairwise_sq_distances(const PointMatrix<S>& x) {
  if (!x.allFinite()) throw NumericError("pairwise_sq_distances: non-finite coordinates");
  const Index n = x.rows();
  PointMatrix<S> g(n, n);
  detail::matmul_into(g, x, x.transpose());
  PointMatrix<S> d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = S(0);
    for (Index j = i + 1; j < n; ++j) {
      S v = g(i, i) + g(j, j) - 2 * g(i, j);
      v = std::max(v, S(0));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

namespace detail {

/// Returns the selection gap: distance of the first excluded candidate minus
/// the last included one (infinity when nothing is excluded).
template <typename S>
double select_neighbors(const S* dist_row, Index n, Index i, Index k, bool self_loop, Index* out,
                        std::vector<std::pair<S, Index>>& cand) {
  const bool flip_ties = knn_tie_fault_hook().load(std::memory_order_relaxed);
  cand.clear();
  for (Index j = 0; j < n; ++j)
    if (j != i) cand.emplace_back(dist_row[j], j);
  auto cmp = [flip_ties](const std::pair<S, Index>& a, const std::pair<S, Index>& b) {
    if (a.first != b.first) return a.first < b.first;
    return flip_ties ? a.second > b.second : a.second < b.second;
  };
  Index take = self_loop ? k - 1 : k;
  Index sorted = std::min<Index>(take + 1, static_cast<Index>(cand.size()));
  std::partial_sort(cand.begin(), cand.begin() + sorted, cand.end(), cmp);
  Index slot = 0;
  if (self_loop) out[slot++] = i;
  for (Index j = 0; j < take; ++j) out[slot++] = cand[static_cast<std::size_t>(j)].second;
  if (take == 0 || sorted <= take) return std::numeric_limits<double>::infinity();
  return static_cast<double>(cand[static_cast<std::size_t>(take)].first -
                             cand[static_cast<std::size_t>(take - 1)].first);
}

}  // namespace detail

/// Brute-force k-NN over all pairs.  Preconditions: 1 <= k <= n with a
/// self-loop (the self edge takes one slot), 1 <= k <= n-1 without.
/// When `selection_margin` is given it receives the smallest gap between the
/// last kept and first dropped candidate over all rows; finite-difference
/// harnesses resample when that gap could flip under perturbation.
template <typename S>
NeighborGraph knn_graph(const PointMatrix<S>& x, Index k, bool self_loop, double* selection_margin = nullptr) {
  const Index n = x.rows();
  if (n < 1) throw ParameterError("knn_graph: empty point set");
  const Index k_max = self_loop ? n : n - 1;
  if (k < 1 || k > k_max)
    throw ParameterError("knn_graph: k=" + std::to_string(k) + " outside [1," + std::to_string(k_max) + "] for n=" +
                         std::to_string(n) + (self_loop ? " with" : " without") + " self-loop");
  PointMatrix<S> d = pairwise_sq_distances(x);
  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.self_loop = self_loop;
  g.neighbors.resize(n, k);
  double margin = std::numeric_limits<double>::infinity();
  std::vector<std::pair<S, Index>> scratch;
  scratch.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    margin = std::min(margin,
                      detail::select_neighbors<S>(d.data() + i * n, n, i, k, self_loop, g.neighbors.row(i).data(),
                                                  scratch));
  if (selection_margin) *selection_margin = margin;
  return g;
}

/// Same contract as knn_graph, applied to layer-l features.  Named
/// separately so a static-graph configuration can bypass the recomputation.
template <typename S>
NeighborGraph recompute_graph(const PointMatrix<S>& layer_features, Index k, bool self_loop) {
  return knn_graph(layer_features, k, self_loop);
}

/// Debug edge list: `i,j,rank,dist_sq` rows.
template <typename S>
void write_edge_list_csv(std::ostream& out, const NeighborGraph& g, const PointMatrix<S>& x) {
  if (x.rows() != g.n) throw DimensionError("write_edge_list_csv: graph and features disagree on n");
  out << "i,j,rank,dist_sq\n";
  for (Index i = 0; i < g.n; ++i)
    for (Index r = 0; r < g.k; ++r) {
      Index j = g.neighbors(i, r);
      out << i << "," << j << "," << r << "," << static_cast<double>((x.row(i) - x.row(j)).squaredNorm()) << "\n";
    }
}

}  // namespace dgcnn
