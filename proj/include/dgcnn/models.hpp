#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dgcnn/edgeconv.hpp"

namespace dgcnn {

/// Spatial-transformer block: per-edge MLP over [x_i, x_j - x_i], max over
/// neighbors then over points, dense layers, and a zero-initialized final
/// layer whose 9 outputs are added to the identity.
struct TransformConfig {
  std::vector<Index> edge_mlp_widths{64, 128};
  std::vector<Index> dense_widths{512, 256};
};

struct ClassifierConfig {
  Index k = 20;
  std::vector<Index> edgeconv_widths{64, 64, 128, 256};
  Index embed_width = 1024;
  std::vector<Index> head_widths{512, 256};
  Index num_classes = 40;
  double dropout_keep = 0.5;
  bool dynamic_graph = true;
  bool centralization = true;  // [x_i, x_j - x_i] vs plain [x_i, x_j]
  Aggregation global_pool = Aggregation::max;
  bool self_loop = true;
  double leaky_slope = 0.2;
  BnOptions bn{};
  double gaussian_bandwidth = 1.0;
  bool use_spatial_transformer = false;
  TransformConfig transform{};
  /// Explicit edge-function override (the PointNet baseline sets
  /// global_only); by default the centralization flag decides.
  std::optional<EdgeFunction> edge_function;

  EdgeFunctionSpec edge_spec() const {
    EdgeFunction kind = edge_function
                            ? *edge_function
                            : (centralization ? EdgeFunction::centralized_asym : EdgeFunction::pair_concat);
    return {kind, gaussian_bandwidth};
  }
};

struct SegmenterConfig {
  Index k = 20;
  std::vector<Index> edgeconv_widths{64, 64, 64};
  Index embed_width = 1024;
  std::vector<Index> head_widths{256, 256, 128};
  Index num_part_labels = 50;
  Index category_vector_width = 0;  // 0 disables the categorical input
  bool use_spatial_transformer = true;
  double dropout_keep = 0.5;
  bool dynamic_graph = true;
  bool centralization = true;
  Aggregation global_pool = Aggregation::max;
  bool self_loop = true;
  double leaky_slope = 0.2;
  BnOptions bn{};
  double gaussian_bandwidth = 1.0;
  TransformConfig transform{};
  std::optional<EdgeFunction> edge_function;

  EdgeFunctionSpec edge_spec() const {
    EdgeFunction kind = edge_function
                            ? *edge_function
                            : (centralization ? EdgeFunction::centralized_asym : EdgeFunction::pair_concat);
    return {kind, gaussian_bandwidth};
  }
};

template <typename S>
struct TransformParams {
  std::vector<DenseLayerParams<S>> edge_mlp;
  std::vector<DenseLayerParams<S>> dense;
  DenseLayerParams<S> out9;  // zero-initialized; identity is added structurally

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < edge_mlp.size(); ++i) edge_mlp[i].visit(prefix + ".edge" + std::to_string(i), f);
    for (std::size_t i = 0; i < dense.size(); ++i) dense[i].visit(prefix + ".dense" + std::to_string(i), f);
    out9.visit(prefix + ".out9", f);
  }
};

template <typename S>
TransformParams<S> make_transform(const TransformConfig& cfg, Rng& rng, double slope = 0.2) {
  TransformParams<S> p;
  Index w = edge_input_width(EdgeFunction::centralized_asym, 3);
  for (Index out : cfg.edge_mlp_widths) {
    p.edge_mlp.push_back(make_dense_layer<S>(w, out, rng, true, true, slope));
    w = out;
  }
  for (Index out : cfg.dense_widths) {
    p.dense.push_back(make_dense_layer<S>(w, out, rng, true, true, slope));
    w = out;
  }
  p.out9 = make_dense_layer<S>(w, 9, rng, /*use_bn=*/false, /*use_activation=*/false);
  p.out9.weight.vec().setZero();  // emitted matrix starts as the exact identity
  return p;
}

template <typename S>
struct ClassifierParams {
  std::vector<EdgeConvParams<S>> stages;
  DenseLayerParams<S> embed;
  std::vector<DenseLayerParams<S>> head;
  DenseLayerParams<S> logits;
  std::optional<TransformParams<S>> transform;

  template <typename F>
  void visit(F&& f) {
    if (transform) transform->visit("transform", f);
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit("stage" + std::to_string(i), f);
    embed.visit("embed", f);
    for (std::size_t i = 0; i < head.size(); ++i) head[i].visit("head" + std::to_string(i), f);
    logits.visit("logits", f);
  }
};

template <typename S>
ClassifierParams<S> init_classifier(const ClassifierConfig& cfg, Rng& rng, Index in_features = 3) {
  if (cfg.edgeconv_widths.empty()) throw ParameterError("classifier: needs at least one EdgeConv stage");
  ClassifierParams<S> p;
  if (cfg.use_spatial_transformer) p.transform = make_transform<S>(cfg.transform, rng, cfg.leaky_slope);
  EdgeFunction kind = cfg.edge_spec().kind;
  Index f = in_features;
  Index skip_width = 0;
  for (Index out : cfg.edgeconv_widths) {
    p.stages.push_back(make_edgeconv<S>(f, std::span<const Index>(&out, 1), kind, rng, true, cfg.leaky_slope));
    f = out;
    skip_width += out;
  }
  p.embed = make_dense_layer<S>(skip_width, cfg.embed_width, rng, true, true, cfg.leaky_slope);
  Index w = cfg.embed_width;
  for (Index out : cfg.head_widths) {
    p.head.push_back(make_dense_layer<S>(w, out, rng, true, true, cfg.leaky_slope));
    w = out;
  }
  p.logits = make_dense_layer<S>(w, cfg.num_classes, rng, /*use_bn=*/false, /*use_activation=*/false);
  return p;
}

template <typename S>
struct SegmenterParams {
  std::optional<TransformParams<S>> transform;
  std::vector<EdgeConvParams<S>> stages;
  DenseLayerParams<S> embed;
  std::vector<DenseLayerParams<S>> head;
  DenseLayerParams<S> logits;

  template <typename F>
  void visit(F&& f) {
    if (transform) transform->visit("transform", f);
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit("stage" + std::to_string(i), f);
    embed.visit("embed", f);
    for (std::size_t i = 0; i < head.size(); ++i) head[i].visit("head" + std::to_string(i), f);
    logits.visit("logits", f);
  }
};

template <typename S>
SegmenterParams<S> init_segmenter(const SegmenterConfig& cfg, Rng& rng, Index in_features = 3) {
  if (cfg.edgeconv_widths.empty()) throw ParameterError("segmenter: needs at least one EdgeConv stage");
  SegmenterParams<S> p;
  if (cfg.use_spatial_transformer) p.transform = make_transform<S>(cfg.transform, rng, cfg.leaky_slope);
  EdgeFunction kind = cfg.edge_spec().kind;
  Index f = in_features;
  Index skip_width = 0;
  for (Index out : cfg.edgeconv_widths) {
    p.stages.push_back(make_edgeconv<S>(f, std::span<const Index>(&out, 1), kind, rng, true, cfg.leaky_slope));
    f = out;
    skip_width += out;
  }
  p.embed = make_dense_layer<S>(skip_width, cfg.embed_width, rng, true, true, cfg.leaky_slope);
  Index w = cfg.embed_width + cfg.category_vector_width + skip_width;
  for (Index out : cfg.head_widths) {
    p.head.push_back(make_dense_layer<S>(w, out, rng, true, true, cfg.leaky_slope));
    w = out;
  }
  p.logits = make_dense_layer<S>(w, cfg.num_part_labels, rng, /*use_bn=*/false, /*use_activation=*/false);
  return p;
}

/// Learnable scalar count (batch-norm running stats excluded).
template <typename P>
Index param_count(P& params) {
  Index count = 0;
  params.visit([&](const std::string&, auto& tensor, bool learnable) {
    if (learnable) count += tensor.numel();
  });
  return count;
}

/// Observer for intermediate stages; used by the feature-distance export and
/// the structural graph assertions.
template <typename S>
struct ForwardCapture {
  std::vector<std::pair<std::string, Tensor<S>>> stage_features;
  std::vector<std::vector<NeighborGraph>> stage_graphs;  // [stage][cloud]
};

namespace detail {

template <typename S>
std::vector<NeighborGraph> per_cloud_graphs(Tape<S>& tape, const Tensor<S>& features, Index batch, Index n, Index k,
                                            bool self_loop) {
  std::vector<NeighborGraph> graphs;
  graphs.reserve(static_cast<std::size_t>(batch));
  auto m = features.matrix();
  for (Index c = 0; c < batch; ++c) {
    PointMatrix<S> block = m.middleRows(c * n, n);
    double margin = 0;
    graphs.push_back(knn_graph(block, k, self_loop, &margin));
    tape.note_margin("knn_select", margin);
  }
  return graphs;
}

inline EdgeIndex flatten_graphs(const std::vector<NeighborGraph>& graphs, Index n) {
  EdgeIndex edges;
  for (std::size_t c = 0; c < graphs.size(); ++c) edges.append(graphs[c], static_cast<Index>(c) * n);
  return edges;
}

/// Reduce {batch*n, w} point features to {batch, w} via the pooling kind.
template <typename S>
Var global_pool(Tape<S>& tape, Var x, Index batch, Index n, Aggregation kind) {
  if (tape.value(x).extent(0) != batch * n) throw DimensionError("global_pool: row count mismatch");
  if (kind == Aggregation::max) return max_over_row_groups(tape, x, n).values;
  return sum_over_row_groups(tape, x, n);
}

}  // namespace detail

/// Spatial transformer applied to the first 3 (coordinate) channels.
/// Returns the transformed features and the {batch, 3, 3} matrices.
template <typename S>
struct TransformResult {
  Var features;
  Var matrices;
};

template <typename S>
struct BoundTransform {
  TransformParams<S>* params = nullptr;
  std::vector<BoundDense<S>> edge_mlp;
  std::vector<BoundDense<S>> dense;
  BoundDense<S> out9;
};

template <typename S>
BoundTransform<S> bind(Tape<S>& tape, TransformParams<S>& p) {
  BoundTransform<S> b;
  b.params = &p;
  for (auto& l : p.edge_mlp) b.edge_mlp.push_back(bind(tape, l));
  for (auto& l : p.dense) b.dense.push_back(bind(tape, l));
  b.out9 = bind(tape, p.out9);
  return b;
}

template <typename S>
TransformResult<S> spatial_transform(Tape<S>& tape, Var points, Index batch, Index n, Index k, bool self_loop,
                                     const BoundTransform<S>& bt, bool training, const BnOptions& bn = {}) {
  const Tensor<S>& P = tape.value(points);
  if (P.extent(0) != batch * n || P.extent(1) < 3)
    throw DimensionError("spatial_transform: expected {batch*n, >=3} coordinates");
  if (n < k) throw ParameterError("spatial_transform: n < k");
  const Index f_in = P.extent(1);
  Var coords = f_in == 3 ? points : slice_cols(tape, points, 0, 3);

  auto graphs = detail::per_cloud_graphs(tape, tape.value(coords), batch, n, k, self_loop);
  EdgeIndex edges = detail::flatten_graphs(graphs, n);

  Var h = edge_input_rows(tape, coords, edges, EdgeFunction::centralized_asym);
  for (const auto& layer : bt.edge_mlp) h = dense_forward(tape, layer, h, training, bn);
  h = max_over_row_groups(tape, h, k).values;                    // per point
  h = detail::global_pool(tape, h, batch, n, Aggregation::max);  // per cloud
  for (const auto& layer : bt.dense) h = dense_forward(tape, layer, h, training, bn);
  Var nine = dense_forward(tape, bt.out9, h, training, bn);  // {batch, 9}

  Tensor<S> identity({9});
  identity[0] = identity[4] = identity[8] = S(1);
  Var mats = add_rowvec(tape, nine, tape.constant(std::move(identity)));

  std::vector<Var> transformed;
  for (Index c = 0; c < batch; ++c) {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = c * n + i;
    Var cloud = gather_rows(tape, coords, rows);
    Var m = reshape(tape, gather_rows(tape, mats, {c}), {3, 3});
    transformed.push_back(matmul(tape, cloud, m));
  }
  Var aligned = batch == 1 ? transformed[0] : concat(tape, std::span<const Var>(transformed), 0);

  TransformResult<S> result;
  result.matrices = reshape(tape, mats, {batch, 3, 3});
  result.features = f_in == 3 ? aligned : concat(tape, {aligned, slice_cols(tape, points, 3, f_in - 3)}, 1);
  return result;
}

template <typename S>
struct BoundClassifier {
  ClassifierParams<S>* params = nullptr;
  std::optional<BoundTransform<S>> transform;
  std::vector<BoundEdgeConv<S>> stages;
  BoundDense<S> embed;
  std::vector<BoundDense<S>> head;
  BoundDense<S> logits;
};

template <typename S>
BoundClassifier<S> bind(Tape<S>& tape, ClassifierParams<S>& p) {
  BoundClassifier<S> b;
  b.params = &p;
  if (p.transform) b.transform = bind(tape, *p.transform);
  for (auto& s : p.stages) b.stages.push_back(bind(tape, s));
  b.embed = bind(tape, p.embed);
  for (auto& h : p.head) b.head.push_back(bind(tape, h));
  b.logits = bind(tape, p.logits);
  return b;
}

/// Shared trunk of both branches: per-stage graphs (dynamic or static),
/// EdgeConv with max aggregation, and the skip concatenation.
template <typename S, typename Bound>
Var edgeconv_trunk(Tape<S>& tape, Var h, Index batch, Index n, Index k, bool self_loop, bool dynamic,
                   const EdgeFunctionSpec& spec, const std::vector<Bound>& stages, bool training, const BnOptions& bn,
                   ForwardCapture<S>* capture, std::vector<Var>* skips_out) {
  std::vector<NeighborGraph> base = detail::per_cloud_graphs(tape, tape.value(h), batch, n, k, self_loop);
  std::vector<Var> skips;
  for (std::size_t l = 0; l < stages.size(); ++l) {
    std::vector<NeighborGraph> graphs =
        (l == 0 || !dynamic) ? base : detail::per_cloud_graphs(tape, tape.value(h), batch, n, k, self_loop);
    if (capture) capture->stage_graphs.push_back(graphs);
    EdgeIndex edges = detail::flatten_graphs(graphs, n);
    h = edgeconv_forward(tape, h, edges, stages[l], spec, Aggregation::max, training, bn);
    if (capture)
      capture->stage_features.emplace_back("edgeconv" + std::to_string(l + 1), tape.value(h));
    skips.push_back(h);
  }
  *skips_out = std::move(skips);
  return h;
}

/// Batched classifier forward: points is a {batch*n, f} tape variable holding
/// `batch` clouds of n points each; returns {batch, num_classes} logits.
template <typename S>
Var classifier_forward(Tape<S>& tape, Var points, Index batch, Index n, const ClassifierConfig& cfg,
                       const BoundClassifier<S>& bound, bool training, Rng* dropout_rng = nullptr,
                       ForwardCapture<S>* capture = nullptr) {
  const Tensor<S>& P = tape.value(points);
  if (P.rank() != 2 || P.extent(0) != batch * n)
    throw DimensionError("classifier_forward: points must be {batch*n, f}");
  if (n < cfg.k) throw ParameterError("classifier_forward: n=" + std::to_string(n) + " < k=" + std::to_string(cfg.k));
  if (training && !dropout_rng) throw ContractError("classifier_forward: training mode needs a dropout rng");

  Var h = points;
  if (capture) capture->stage_features.emplace_back("input", tape.value(h));
  if (bound.transform) {
    h = spatial_transform(tape, h, batch, n, cfg.k, cfg.self_loop, *bound.transform, training, cfg.bn).features;
    if (capture) capture->stage_features.emplace_back("transform", tape.value(h));
  }

  std::vector<Var> skips;
  edgeconv_trunk(tape, h, batch, n, cfg.k, cfg.self_loop, cfg.dynamic_graph, cfg.edge_spec(), bound.stages, training,
                 cfg.bn, capture, &skips);
  Var sk = skips.size() == 1 ? skips[0] : concat(tape, std::span<const Var>(skips), 1);
  Var emb = dense_forward(tape, bound.embed, sk, training, cfg.bn);
  Var pooled = detail::global_pool(tape, emb, batch, n, cfg.global_pool);

  Var hh = pooled;
  for (const auto& layer : bound.head) {
    hh = dense_forward(tape, layer, hh, training, cfg.bn);
    if (training) hh = dropout(tape, hh, cfg.dropout_keep, training, *dropout_rng);
  }
  return dense_forward(tape, bound.logits, hh, training, cfg.bn);
}

/// Parameter-tensor/tape-variable pairs in traversal order; the trainer uses
/// this to route gradients back into the persistent parameter structs.
template <typename S>
using Bindings = std::vector<std::pair<Tensor<S>*, Var>>;

template <typename S>
void collect_bindings(const BoundDense<S>& b, Bindings<S>& out) {
  out.emplace_back(&b.params->weight, b.weight);
  if (b.params->use_bias()) out.emplace_back(&b.params->bias, b.bias);
  if (b.params->use_bn) {
    out.emplace_back(&b.params->bn_gamma, b.gamma);
    out.emplace_back(&b.params->bn_beta, b.beta);
  }
}

template <typename S>
void collect_bindings(const BoundEdgeConv<S>& b, Bindings<S>& out) {
  for (const auto& l : b.mlp) collect_bindings(l, out);
}

template <typename S>
void collect_bindings(const BoundTransform<S>& b, Bindings<S>& out) {
  for (const auto& l : b.edge_mlp) collect_bindings(l, out);
  for (const auto& l : b.dense) collect_bindings(l, out);
  collect_bindings(b.out9, out);
}

template <typename S>
void collect_bindings(const BoundClassifier<S>& b, Bindings<S>& out) {
  if (b.transform) collect_bindings(*b.transform, out);
  for (const auto& s : b.stages) collect_bindings(s, out);
  collect_bindings(b.embed, out);
  for (const auto& h : b.head) collect_bindings(h, out);
  collect_bindings(b.logits, out);
}

/// Single-cloud evaluation-mode logits.
template <typename S>
Eigen::VectorX<S> classify_logits(const PointMatrix<S>& cloud, const ClassifierConfig& cfg,
                                  ClassifierParams<S>& params, ForwardCapture<S>* capture = nullptr) {
  Tape<S> tape;
  Var x = tape.constant(Tensor<S>::from_matrix(cloud));
  auto bound = bind(tape, params);
  Var logits = classifier_forward(tape, x, 1, cloud.rows(), cfg, bound, /*training=*/false, nullptr, capture);
  return tape.value(logits).vec();
}

/// PointNet baseline: the same assembly with the graph-independent
/// global_only edge function (k=1 self-loop graph).
inline ClassifierConfig pointnet_baseline_config(ClassifierConfig cfg) {
  cfg.edge_function = EdgeFunction::global_only;
  cfg.k = 1;
  cfg.self_loop = true;
  cfg.dynamic_graph = false;
  return cfg;
}

template <typename S>
Eigen::VectorX<S> pointnet_baseline_logits(const PointMatrix<S>& cloud, const ClassifierConfig& cfg,
                                           ClassifierParams<S>& params) {
  ClassifierConfig base = pointnet_baseline_config(cfg);
  return classify_logits(cloud, base, params);
}

template <typename S>
struct BoundSegmenter {
  SegmenterParams<S>* params = nullptr;
  std::optional<BoundTransform<S>> transform;
  std::vector<BoundEdgeConv<S>> stages;
  BoundDense<S> embed;
  std::vector<BoundDense<S>> head;
  BoundDense<S> logits;
};

template <typename S>
BoundSegmenter<S> bind(Tape<S>& tape, SegmenterParams<S>& p) {
  BoundSegmenter<S> b;
  b.params = &p;
  if (p.transform) b.transform = bind(tape, *p.transform);
  for (auto& s : p.stages) b.stages.push_back(bind(tape, s));
  b.embed = bind(tape, p.embed);
  for (auto& h : p.head) b.head.push_back(bind(tape, h));
  b.logits = bind(tape, p.logits);
  return b;
}

template <typename S>
void collect_bindings(const BoundSegmenter<S>& b, Bindings<S>& out) {
  if (b.transform) collect_bindings(*b.transform, out);
  for (const auto& s : b.stages) collect_bindings(s, out);
  collect_bindings(b.embed, out);
  for (const auto& h : b.head) collect_bindings(h, out);
  collect_bindings(b.logits, out);
}

/// Batched segmenter forward; category_onehot is {batch, w} or an invalid
/// Var when the categorical input is disabled.  Returns {batch*n, p}.
template <typename S>
Var segmenter_forward(Tape<S>& tape, Var points, Var category_onehot, Index batch, Index n, const SegmenterConfig& cfg,
                      const BoundSegmenter<S>& bound, bool training, Rng* dropout_rng = nullptr,
                      ForwardCapture<S>* capture = nullptr) {
  const Tensor<S>& P = tape.value(points);
  if (P.rank() != 2 || P.extent(0) != batch * n)
    throw DimensionError("segmenter_forward: points must be {batch*n, f}");
  if (n < cfg.k) throw ParameterError("segmenter_forward: n < k");
  if (cfg.category_vector_width > 0) {
    if (!category_onehot.valid()) throw ParameterError("segmenter_forward: category vector required by config");
    const Tensor<S>& C = tape.value(category_onehot);
    if (C.rank() != 2 || C.extent(0) != batch || C.extent(1) != cfg.category_vector_width)
      throw ParameterError("segmenter_forward: category vector must be {batch, " +
                           std::to_string(cfg.category_vector_width) + "}");
  }
  if (training && !dropout_rng) throw ContractError("segmenter_forward: training mode needs a dropout rng");

  Var h = points;
  if (capture) capture->stage_features.emplace_back("input", tape.value(h));
  if (bound.transform) {
    h = spatial_transform(tape, h, batch, n, cfg.k, cfg.self_loop, *bound.transform, training, cfg.bn).features;
    if (capture) capture->stage_features.emplace_back("transform", tape.value(h));
  }

  std::vector<Var> skips;
  edgeconv_trunk(tape, h, batch, n, cfg.k, cfg.self_loop, cfg.dynamic_graph, cfg.edge_spec(), bound.stages, training,
                 cfg.bn, capture, &skips);
  Var sk = skips.size() == 1 ? skips[0] : concat(tape, std::span<const Var>(skips), 1);
  Var emb = dense_forward(tape, bound.embed, sk, training, cfg.bn);
  Var pooled = detail::global_pool(tape, emb, batch, n, cfg.global_pool);

  // broadcast the global descriptor (and category vector) back to each point
  std::vector<Index> owner(static_cast<std::size_t>(batch * n));
  for (Index c = 0; c < batch; ++c)
    for (Index i = 0; i < n; ++i) owner[static_cast<std::size_t>(c * n + i)] = c;
  std::vector<Var> per_point{gather_rows(tape, pooled, owner)};
  if (cfg.category_vector_width > 0) per_point.push_back(gather_rows(tape, category_onehot, owner));
  for (Var s : skips) per_point.push_back(s);
  Var hh = concat(tape, std::span<const Var>(per_point), 1);

  for (const auto& layer : bound.head) {
    hh = dense_forward(tape, layer, hh, training, cfg.bn);
    if (training) hh = dropout(tape, hh, cfg.dropout_keep, training, *dropout_rng);
  }
  return dense_forward(tape, bound.logits, hh, training, cfg.bn);
}

/// Single-cloud evaluation-mode per-point logits.
template <typename S>
PointMatrix<S> segment_logits(const PointMatrix<S>& cloud, const Eigen::RowVectorX<S>* category,
                              const SegmenterConfig& cfg, SegmenterParams<S>& params,
                              ForwardCapture<S>* capture = nullptr) {
  Tape<S> tape;
  Var x = tape.constant(Tensor<S>::from_matrix(cloud));
  Var cat;
  if (cfg.category_vector_width > 0) {
    if (!category) throw ParameterError("segment_logits: category vector required by config");
    cat = tape.constant(Tensor<S>::from_matrix(*category));
  }
  auto bound = bind(tape, params);
  Var logits = segmenter_forward(tape, x, cat, 1, cloud.rows(), cfg, bound, false, nullptr, capture);
  return PointMatrix<S>(tape.value(logits).matrix());
}

}  // namespace dgcnn
