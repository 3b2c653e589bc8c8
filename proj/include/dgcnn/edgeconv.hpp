#pragma once

#include <span>
#include <vector>

#include "dgcnn/graph.hpp"
#include "dgcnn/nn.hpp"

namespace dgcnn {

/// Edge-function families.  The first five are the classical choices for
/// h(x_i, x_j); pair_concat is the un-centralized ablation input [x_i, x_j].
enum class EdgeFunction {
  global_only,        // h(x_i, x_j) = h(x_i): graph-independent, PointNet-style
  neighbor_only,      // h(x_i, x_j) = h(x_j)
  neighbor_gaussian,  // h(x_j) weighted by a Gaussian kernel of the pair distance
  local_only,         // h(x_j - x_i): translation invariant, no global anchor
  centralized_asym,   // h(x_i, x_j - x_i): global anchor plus local displacement
  pair_concat,        // h(x_i, x_j) as a plain concatenation (ablation baseline)
};

struct EdgeFunctionSpec {
  EdgeFunction kind = EdgeFunction::centralized_asym;
  double gaussian_bandwidth = 1.0;  // neighbor_gaussian only
};

inline void validate(const EdgeFunctionSpec& spec) {
  if (spec.kind == EdgeFunction::neighbor_gaussian && !(spec.gaussian_bandwidth > 0.0))
    throw ParameterError("edge function: gaussian bandwidth must be positive");
}

/// Width of the per-edge input as a function of the feature width.
inline Index edge_input_width(EdgeFunction kind, Index f) {
  switch (kind) {
    case EdgeFunction::centralized_asym:
    case EdgeFunction::pair_concat:
      return 2 * f;
    default:
      return f;
  }
}

enum class Aggregation { max, sum };

inline const char* to_string(Aggregation a) { return a == Aggregation::max ? "max" : "sum"; }
inline const char* to_string(EdgeFunction k) {
  switch (k) {
    case EdgeFunction::global_only: return "global_only";
    case EdgeFunction::neighbor_only: return "neighbor_only";
    case EdgeFunction::neighbor_gaussian: return "neighbor_gaussian";
    case EdgeFunction::local_only: return "local_only";
    case EdgeFunction::centralized_asym: return "centralized_asym";
    case EdgeFunction::pair_concat: return "pair_concat";
  }
  return "?";
}

/// Shared MLP applied to every edge.  For centralized/pair inputs the first
/// weight matrix stacks the x_i block on top of the displacement block.
template <typename S>
struct EdgeConvParams {
  std::vector<DenseLayerParams<S>> mlp;

  Index out_width() const { return mlp.back().out_width(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < mlp.size(); ++i) mlp[i].visit(prefix + ".mlp" + std::to_string(i), f);
  }
};

template <typename S>
EdgeConvParams<S> make_edgeconv(Index in_features, std::span<const Index> widths, EdgeFunction kind, Rng& rng,
                                bool use_bn = true, double slope = 0.2) {
  EdgeConvParams<S> p;
  Index w = edge_input_width(kind, in_features);
  for (Index out : widths) {
    p.mlp.push_back(make_dense_layer<S>(w, out, rng, use_bn, true, slope));
    w = out;
  }
  return p;
}

template <typename S>
struct BoundEdgeConv {
  EdgeConvParams<S>* params = nullptr;
  std::vector<BoundDense<S>> mlp;
};

template <typename S>
BoundEdgeConv<S> bind(Tape<S>& tape, EdgeConvParams<S>& params) {
  BoundEdgeConv<S> b;
  b.params = &params;
  for (auto& layer : params.mlp) b.mlp.push_back(bind(tape, layer));
  return b;
}

/// Edge endpoints for one or more clouds laid out in a shared row space.
/// centers[e] = i and neighbors[e] = j for edge e; edges are grouped per
/// point, k consecutive edges each.
struct EdgeIndex {
  std::vector<Index> centers;
  std::vector<Index> neighbors;
  Index n = 0;  // total points
  Index k = 0;

  static EdgeIndex from_graph(const NeighborGraph& g, Index row_offset = 0) {
    EdgeIndex e;
    e.append(g, row_offset);
    return e;
  }

  void append(const NeighborGraph& g, Index row_offset) {
    if (k == 0) k = g.k;
    if (k != g.k) throw DimensionError("edge index: mixed k within one batch");
    for (Index i = 0; i < g.n; ++i)
      for (Index r = 0; r < g.k; ++r) {
        centers.push_back(row_offset + i);
        neighbors.push_back(row_offset + g.neighbors(i, r));
      }
    n += g.n;
  }
};

/// Per-edge input rows, one fused primitive: (n*k) x w where w is F or 2F by
/// edge function.  Backward scatter-adds into a single feature gradient.
template <typename S>
Var edge_input_rows(Tape<S>& tape, Var x, const EdgeIndex& edges, EdgeFunction kind) {
  const Tensor<S>& X = tape.value(x);
  if (X.rank() != 2) throw DimensionError("edge_inputs: features must be rank 2");
  if (edges.n != X.extent(0))
    throw DimensionError("edge_inputs: graph covers " + std::to_string(edges.n) + " points but features have " +
                         std::to_string(X.extent(0)) + " rows");
  const Index f = X.extent(1);
  const Index e_count = static_cast<Index>(edges.centers.size());
  Tensor<S> out({e_count, edge_input_width(kind, f)});
  auto xm = X.matrix();
  auto om = out.matrix();
  // consecutive edges share a center: fill the neighbor-dependent part row
  // by row, then apply the center contribution blockwise per point
  for (Index e = 0; e < e_count; ++e) {
    Index ni = edges.neighbors[static_cast<std::size_t>(e)];
    switch (kind) {
      case EdgeFunction::global_only: break;
      case EdgeFunction::neighbor_only:
      case EdgeFunction::neighbor_gaussian:
      case EdgeFunction::local_only: om.row(e) = xm.row(ni); break;
      case EdgeFunction::centralized_asym:
      case EdgeFunction::pair_concat: om.row(e).tail(f) = xm.row(ni); break;
    }
  }
  for (Index e0 = 0; e0 < e_count; e0 += edges.k) {
    Index ci = edges.centers[static_cast<std::size_t>(e0)];
    for (Index j = 0; j < edges.k; ++j) {
      auto row = om.row(e0 + j);
      switch (kind) {
        case EdgeFunction::global_only: row = xm.row(ci); break;
        case EdgeFunction::neighbor_only:
        case EdgeFunction::neighbor_gaussian: break;
        case EdgeFunction::local_only: row -= xm.row(ci); break;
        case EdgeFunction::centralized_asym:
          row.head(f) = xm.row(ci);
          row.tail(f) -= xm.row(ci);
          break;
        case EdgeFunction::pair_concat: row.head(f) = xm.row(ci); break;
      }
    }
  }
  return tape.emit("edge_inputs", {x}, std::move(out), Tape<S>::kNoMargin,
                   [t = &tape, x, centers = edges.centers, neighbors = edges.neighbors, kind,
                    f](const Tensor<S>& g, Gradients<S>& sink) {
                     Tensor<S> dx(t->value(x).shape());
                     auto dm = dx.matrix();
                     auto gm = g.matrix();
                     const Index e_count = static_cast<Index>(centers.size());
                     for (Index e = 0; e < e_count; ++e) {
                       Index ci = centers[static_cast<std::size_t>(e)];
                       Index ni = neighbors[static_cast<std::size_t>(e)];
                       switch (kind) {
                         case EdgeFunction::global_only: dm.row(ci) += gm.row(e); break;
                         case EdgeFunction::neighbor_only:
                         case EdgeFunction::neighbor_gaussian: dm.row(ni) += gm.row(e); break;
                         case EdgeFunction::local_only:
                           dm.row(ni) += gm.row(e);
                           dm.row(ci) -= gm.row(e);
                           break;
                         case EdgeFunction::centralized_asym:
                           dm.row(ci) += gm.row(e).head(f) - gm.row(e).tail(f);
                           dm.row(ni) += gm.row(e).tail(f);
                           break;
                         case EdgeFunction::pair_concat:
                           dm.row(ci) += gm.row(e).head(f);
                           dm.row(ni) += gm.row(e).tail(f);
                           break;
                       }
                     }
                     sink.accumulate(x, std::move(dx));
                   });
}

/// Per-edge inputs of shape {n, k, w} where w is F or 2F by edge function.
template <typename S>
Var edge_inputs(Tape<S>& tape, Var x, const EdgeIndex& edges, const EdgeFunctionSpec& spec) {
  validate(spec);
  const Index f = tape.value(x).extent(1);
  Var flat = edge_input_rows(tape, x, edges, spec.kind);
  return reshape(tape, flat, {edges.n, edges.k, edge_input_width(spec.kind, f)});
}

template <typename S>
Var edge_inputs(Tape<S>& tape, Var x, const NeighborGraph& g, const EdgeFunctionSpec& spec) {
  return edge_inputs(tape, x, EdgeIndex::from_graph(g), spec);
}

/// Channel-wise reduction of {n, k, m} edge features to {n, m}.
template <typename S>
Var aggregate(Tape<S>& tape, Var edge_features, Aggregation agg) {
  const Tensor<S>& E = tape.value(edge_features);
  if (E.rank() != 3) throw DimensionError("aggregate: expected {n, k, m} edge features");
  if (agg == Aggregation::max) return max_over_axis(tape, edge_features, 1).values;
  return sum_over_axis(tape, edge_features, 1);
}

/// EdgeConv: edge inputs -> shared MLP -> (optional Gaussian weighting) ->
/// symmetric aggregation over each point's edges.  Output is {n, m}.
template <typename S>
Var edgeconv_forward(Tape<S>& tape, Var x, const EdgeIndex& edges, const BoundEdgeConv<S>& conv,
                     const EdgeFunctionSpec& spec, Aggregation agg, bool training, const BnOptions& bn = {}) {
  if (conv.mlp.empty()) throw ContractError("edgeconv_forward: empty MLP");
  const Index f = tape.value(x).extent(1);
  if (conv.mlp.front().params->in_width() != edge_input_width(spec.kind, f))
    throw DimensionError("edgeconv_forward: MLP expects input width " +
                         std::to_string(conv.mlp.front().params->in_width()) + " but edge inputs have width " +
                         std::to_string(edge_input_width(spec.kind, f)));

  validate(spec);
  Var h = edge_input_rows(tape, x, edges, spec.kind);
  for (const auto& layer : conv.mlp) h = dense_forward(tape, layer, h, training, bn);

  if (spec.kind == EdgeFunction::neighbor_gaussian) {
    // g(u(x_i, x_j)) = exp(-|x_i - x_j|^2 / (2 bw^2)), differentiable in x
    Var diff = sub(tape, gather_rows(tape, x, edges.neighbors), gather_rows(tape, x, edges.centers));
    Var sq = sum_over_axis(tape, mul(tape, diff, diff), 1);
    Var w = dgcnn::exp(tape, scale(tape, sq, static_cast<S>(-0.5 / (spec.gaussian_bandwidth * spec.gaussian_bandwidth))));
    h = mul_colvec(tape, h, w);
  }

  if (agg == Aggregation::max) return max_over_row_groups(tape, h, edges.k).values;
  return sum_over_row_groups(tape, h, edges.k);
}

template <typename S>
Var edgeconv_forward(Tape<S>& tape, Var x, const NeighborGraph& g, const BoundEdgeConv<S>& conv,
                     const EdgeFunctionSpec& spec, Aggregation agg, bool training, const BnOptions& bn = {}) {
  return edgeconv_forward(tape, x, EdgeIndex::from_graph(g), conv, spec, agg, training, bn);
}

/// Reference form of the asymmetric edge feature, one output channel per
/// column of theta/phi: ReLU(theta_m . (x_j - x_i) + phi_m . x_i).
/// Kept as plain loops, independent of the tape path it validates.
template <typename S>
Eigen::RowVectorX<S> asym_edge_feature(const Eigen::RowVectorX<S>& x_i, const Eigen::RowVectorX<S>& x_j,
                                       const PointMatrix<S>& theta, const PointMatrix<S>& phi) {
  const Index f = x_i.size();
  if (x_j.size() != f || theta.rows() != f || phi.rows() != f || theta.cols() != phi.cols())
    throw DimensionError("asym_edge_feature: width mismatch");
  const Index m = theta.cols();
  Eigen::RowVectorX<S> out(m);
  for (Index c = 0; c < m; ++c) {
    S acc = S(0);
    for (Index d = 0; d < f; ++d) acc += theta(d, c) * (x_j[d] - x_i[d]) + phi(d, c) * x_i[d];
    out[c] = acc > S(0) ? acc : S(0);
  }
  return out;
}

}  // namespace dgcnn
