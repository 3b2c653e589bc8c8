#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dgcnn/edgeconv.hpp"
#include "dgcnn/grad_check.hpp"

using namespace dgcnn;

namespace {

PointMatrix<double> random_points(Index n, Index f, Rng& rng, double scale = 1.0) {
  PointMatrix<double> x(n, f);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < f; ++j) x(i, j) = rng.uniform(-scale, scale);
  return x;
}

Tensor64 tensor_from(const PointMatrix<double>& m) { return Tensor64::from_matrix(m); }

// single linear layer with explicit weights, no bias/BN, exact ReLU
EdgeConvParams<double> fixed_linear_conv(const PointMatrix<double>& weight, bool relu) {
  EdgeConvParams<double> p;
  DenseLayerParams<double> layer;
  layer.weight = Tensor64::from_matrix(weight).set_requires_grad(true);
  layer.bias = Tensor64::zeros({weight.cols()}).set_requires_grad(true);
  layer.use_bn = false;
  layer.use_activation = relu;
  layer.activation_slope = 0.0;
  p.mlp.push_back(std::move(layer));
  return p;
}

NeighborGraph manual_graph(Index n, Index k, bool self_loop, std::initializer_list<Index> rows) {
  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.self_loop = self_loop;
  g.neighbors.resize(n, k);
  Index i = 0;
  for (Index v : rows) {
    g.neighbors(i / k, i % k) = v;
    ++i;
  }
  return g;
}

}  // namespace

TEST_CASE("edge inputs per edge function") {
  Tape<double> t;
  PointMatrix<double> pts(2, 2);
  pts << 0, 0, 3, 4;
  Var x = t.input(tensor_from(pts));
  auto g = manual_graph(2, 1, false, {1, 0});

  SUBCASE("local_only is the displacement") {
    Var e = edge_inputs(t, x, g, {EdgeFunction::local_only});
    CHECK(t.value(e).shape() == Shape{2, 1, 2});
    CHECK(t.value(e)[0] == 3.0);
    CHECK(t.value(e)[1] == 4.0);
  }
  SUBCASE("centralized self edge is x_i concat zero") {
    auto self_g = manual_graph(2, 1, true, {0, 1});
    Var e = edge_inputs(t, x, self_g, {EdgeFunction::centralized_asym});
    CHECK(t.value(e).shape() == Shape{2, 1, 4});
    const Tensor64& v = t.value(e);
    CHECK(v[4 * 1 + 0] == 3.0);  // x_i block of point 1
    CHECK(v[4 * 1 + 1] == 4.0);
    CHECK(v[4 * 1 + 2] == 0.0);  // displacement block vanishes on the self edge
    CHECK(v[4 * 1 + 3] == 0.0);
  }
  SUBCASE("global/neighbor/pair pick the expected rows") {
    Var eg = edge_inputs(t, x, g, {EdgeFunction::global_only});
    CHECK(t.value(eg)[0] == 0.0);
    Var en = edge_inputs(t, x, g, {EdgeFunction::neighbor_only});
    CHECK(t.value(en)[0] == 3.0);
    Var ep = edge_inputs(t, x, g, {EdgeFunction::pair_concat});
    CHECK(t.value(ep).shape() == Shape{2, 1, 4});
    CHECK(t.value(ep)[0] == 0.0);
    CHECK(t.value(ep)[2] == 3.0);
  }
}

TEST_CASE("local_only edge inputs cancel a translation") {
  Rng rng(3);
  // dyadic grid keeps x + T exact, so the differences cancel bitwise
  PointMatrix<double> pts(6, 3);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 3; ++j) pts(i, j) = static_cast<double>(rng.below(64)) * 0.125;
  auto g = knn_graph(pts, 3, false);
  auto run = [&](const PointMatrix<double>& p) {
    Tape<double> t;
    Var x = t.input(tensor_from(p));
    return Tensor64(t.value(edge_inputs(t, x, g, {EdgeFunction::local_only})));
  };
  PointMatrix<double> shifted = pts;
  shifted.rowwise() += Eigen::RowVector3d(0.5, -2.0, 8.0);  // representable shift
  CHECK(run(pts).vec() == run(shifted).vec());
}

TEST_CASE("aggregate corner cases") {
  Tape<double> t;
  SUBCASE("k=1 squeezes") {
    Tensor64 ev({1, 1, 3});
    ev[0] = 7; ev[1] = 8; ev[2] = 9;
    Var e = t.input(ev);
    Var m = aggregate(t, e, Aggregation::max);
    CHECK(t.value(m).shape() == Shape{1, 3});
    CHECK(t.value(m)[2] == 9.0);
  }
  SUBCASE("max enumerates per channel") {
    Tensor64 e({1, 2, 2});
    e[0] = 1; e[1] = 2; e[2] = 5; e[3] = 0;
    Var m = aggregate(t, t.input(e), Aggregation::max);
    CHECK(t.value(m)[0] == 5.0);
    CHECK(t.value(m)[1] == 2.0);
  }
  SUBCASE("sum of zeros is zero") {
    Var s = aggregate(t, t.input(Tensor64::zeros({2, 3, 4})), Aggregation::sum);
    CHECK(t.value(s).vec().isZero());
  }
}

TEST_CASE("hand-enumerated EdgeConv on three collinear points") {
  // points 0,1,3 on a line; local_only; theta=1; k=2 without self-loop
  PointMatrix<double> pts(3, 1);
  pts << 0, 1, 3;
  auto g = knn_graph(pts, 2, false);
  PointMatrix<double> w(1, 1);
  w << 1.0;

  SUBCASE("pre-activation maxima are [3, 2, -2]") {
    auto conv = fixed_linear_conv(w, /*relu=*/false);
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::local_only}, Aggregation::max, false);
    CHECK(t.value(y)[0] == 3.0);
    CHECK(t.value(y)[1] == 2.0);
    CHECK(t.value(y)[2] == -2.0);
  }
  SUBCASE("with exact ReLU the last point clamps to zero") {
    auto conv = fixed_linear_conv(w, /*relu=*/true);
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::local_only}, Aggregation::max, false);
    CHECK(t.value(y)[0] == 3.0);
    CHECK(t.value(y)[1] == 2.0);
    CHECK(t.value(y)[2] == 0.0);
  }
}

TEST_CASE("global_only output is independent of the graph") {
  Rng rng(11);
  auto pts = random_points(10, 3, rng);
  EdgeConvParams<double> conv = make_edgeconv<double>(3, std::array<Index, 1>{5}, EdgeFunction::global_only, rng,
                                                      /*use_bn=*/false);
  auto run = [&](const NeighborGraph& g) {
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    return Tensor64(t.value(edgeconv_forward(t, x, g, bound, {EdgeFunction::global_only}, Aggregation::max, false)));
  };
  auto g1 = knn_graph(pts, 4, true);
  auto g2 = knn_graph(random_points(10, 3, rng), 7, false);  // unrelated topology
  CHECK(run(g1).vec() == run(g2).vec());
}

TEST_CASE("k=1 self-loop centralized EdgeConv is MLP(x_i concat 0)") {
  Rng rng(19);
  auto pts = random_points(5, 3, rng);
  EdgeConvParams<double> conv = make_edgeconv<double>(3, std::array<Index, 1>{4}, EdgeFunction::centralized_asym, rng,
                                                      /*use_bn=*/false);
  auto g = knn_graph(pts, 1, true);
  Tape<double> t;
  Var x = t.input(tensor_from(pts));
  auto bound = bind(t, conv);
  Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false);

  // oracle: apply the layer to [x_i, 0] by hand
  auto wm = conv.mlp[0].weight.matrix();
  for (Index i = 0; i < 5; ++i)
    for (Index c = 0; c < 4; ++c) {
      double acc = 0;
      for (Index d = 0; d < 3; ++d) acc += pts(i, d) * wm(d, c);
      double expect = acc > 0 ? acc : 0.2 * acc;
      CHECK(t.value(y).matrix()(i, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("asym edge feature reference form") {
  SUBCASE("coincident points reduce to ReLU(phi . x_i)") {
    Eigen::RowVectorX<double> xi(2), xj(2);
    xi << 1, 2;
    xj = xi;
    PointMatrix<double> theta(2, 1), phi(2, 1);
    theta << 5, 5;
    phi << 1, 1;
    auto out = asym_edge_feature(xi, xj, theta, phi);
    CHECK(out[0] == 3.0);
  }
  SUBCASE("phi = 0 gives full translation invariance") {
    Eigen::RowVectorX<double> xi(3), xj(3);
    xi << 0.5, -1, 2;
    xj << 1.5, 0.25, -3;
    PointMatrix<double> theta(3, 2), phi = PointMatrix<double>::Zero(3, 2);
    theta << 1, -2, 0.5, 1, 2, 0.25;
    Eigen::RowVectorX<double> shift(3);
    shift << 10, -20, 0.125;
    auto a = asym_edge_feature(xi, xj, theta, phi);
    auto b = asym_edge_feature<double>(xi + shift, xj + shift, theta, phi);
    CHECK(a == b);
  }
  SUBCASE("1-D hand evaluation") {
    Eigen::RowVectorX<double> xi(1), xj(1);
    xi << 2;
    xj << 5;
    PointMatrix<double> theta(1, 1), phi(1, 1);
    theta << 1;
    phi << 0.5;
    CHECK(asym_edge_feature(xi, xj, theta, phi)[0] == 4.0);  // ReLU(3 + 1)
  }
}

TEST_CASE("shared-MLP path matches the reference form on 1000 random edges") {
  Rng rng(23);
  const Index f = 6, m = 8;
  PointMatrix<double> theta = random_points(f, m, rng);
  PointMatrix<double> phi = random_points(f, m, rng);
  // first-layer weight stacks [phi; theta]: rows 0..f-1 hit x_i, f..2f-1 hit x_j - x_i
  PointMatrix<double> stacked(2 * f, m);
  stacked.topRows(f) = phi;
  stacked.bottomRows(f) = theta;
  auto conv = fixed_linear_conv(stacked, /*relu=*/true);

  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    auto pts = random_points(100, f, rng);
    auto g = knn_graph(pts, 1, false);  // 100 edges per rep
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false);
    for (Index i = 0; i < 100; ++i) {
      Eigen::RowVectorX<double> xi = pts.row(i), xj = pts.row(g.neighbors(i, 0));
      auto ref = asym_edge_feature(xi, xj, theta, phi);
      worst = std::max(worst, (t.value(y).matrix().row(i) - ref).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("neighbor_gaussian over the dense self-loop graph reproduces the kernel sum") {
  Rng rng(29);
  const Index n = 7, f = 3, m = 4;
  auto pts = random_points(n, f, rng);
  PointMatrix<double> w = random_points(f, m, rng);
  auto conv = fixed_linear_conv(w, /*relu=*/true);
  const double bw = 0.8;

  Tape<double> t;
  Var x = t.input(tensor_from(pts));
  auto bound = bind(t, conv);
  auto g = knn_graph(pts, n, true);  // dense graph: every point, self included
  Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::neighbor_gaussian, bw}, Aggregation::sum, false);

  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < m; ++c) {
      double acc = 0;
      for (Index j = 0; j < n; ++j) {
        double h = 0;
        for (Index d = 0; d < f; ++d) h += pts(j, d) * w(d, c);
        h = h > 0 ? h : 0;
        double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
        acc += h * std::exp(-d2 / (2 * bw * bw));
      }
      CHECK(t.value(y).matrix()(i, c) == doctest::Approx(acc).epsilon(1e-10));
    }
}

TEST_CASE("neighbor_only with sum on a ring graph is standard convolution") {
  // 5 "pixels" on a ring, fixed +/-1 neighborhoods, theta . x_j summed
  PointMatrix<double> px(5, 2);
  Rng rng(31);
  px = random_points(5, 2, rng);
  auto g = manual_graph(5, 2, false, {4, 1, 0, 2, 1, 3, 2, 4, 3, 0});
  PointMatrix<double> theta(2, 3);
  theta << 1, -1, 0.5, 2, 0.25, -0.75;
  auto conv = fixed_linear_conv(theta, /*relu=*/false);

  Tape<double> t;
  Var x = t.input(tensor_from(px));
  auto bound = bind(t, conv);
  Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::neighbor_only}, Aggregation::sum, false);
  for (Index i = 0; i < 5; ++i) {
    Eigen::RowVector3d expect = (px.row((i + 4) % 5) + px.row((i + 1) % 5)) * theta;
    CHECK((t.value(y).matrix().row(i) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("max aggregation is bitwise invariant to neighbor-row order") {
  Rng rng(37);
  auto pts = random_points(12, 3, rng);
  EdgeConvParams<double> conv =
      make_edgeconv<double>(3, std::array<Index, 1>{6}, EdgeFunction::centralized_asym, rng, false);
  auto g = knn_graph(pts, 5, true);
  NeighborGraph shuffled = g;
  for (Index i = 0; i < 12; ++i) {  // reverse every neighbor row
    for (Index r = 0; r < 5; ++r) shuffled.neighbors(i, r) = g.neighbors(i, 4 - r);
  }
  auto run = [&](const NeighborGraph& graph) {
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    return Tensor64(
        t.value(edgeconv_forward(t, x, graph, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false)));
  };
  CHECK(run(g).vec() == run(shuffled).vec());
}

TEST_CASE("sum aggregation under neighbor-row order changes only by reassociation") {
  Rng rng(38);
  auto pts = random_points(12, 3, rng);
  EdgeConvParams<double> conv =
      make_edgeconv<double>(3, std::array<Index, 1>{6}, EdgeFunction::centralized_asym, rng, false);
  auto g = knn_graph(pts, 5, true);
  NeighborGraph shuffled = g;
  for (Index i = 0; i < 12; ++i)
    for (Index r = 0; r < 5; ++r) shuffled.neighbors(i, r) = g.neighbors(i, 4 - r);
  auto run = [&](const NeighborGraph& graph) {
    Tape<double> t;
    Var x = t.input(tensor_from(pts));
    auto bound = bind(t, conv);
    return Tensor64(
        t.value(edgeconv_forward(t, x, graph, bound, {EdgeFunction::centralized_asym}, Aggregation::sum, false)));
  };
  CHECK((run(g).vec() - run(shuffled).vec()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("whole-cloud permutation equivariance") {
  Rng rng(41);
  const Index n = 14;
  auto pts = random_points(n, 3, rng);
  EdgeConvParams<double> conv =
      make_edgeconv<double>(3, std::array<Index, 2>{8, 6}, EdgeFunction::centralized_asym, rng, false);
  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  PointMatrix<double> ppts(n, 3);
  for (Index i = 0; i < n; ++i) ppts.row(perm[static_cast<std::size_t>(i)]) = pts.row(i);

  auto run = [&](const PointMatrix<double>& p) {
    Tape<double> t;
    Var x = t.input(tensor_from(p));
    auto bound = bind(t, conv);
    return Tensor64(t.value(edgeconv_forward(t, x, knn_graph(p, 4, true), bound, {EdgeFunction::centralized_asym},
                                             Aggregation::max, false)));
  };
  Tensor64 base = run(pts), permuted = run(ppts);
  double worst = 0;
  for (Index i = 0; i < n; ++i)
    worst = std::max(worst,
                     (permuted.matrix().row(perm[static_cast<std::size_t>(i)]) - base.matrix().row(i))
                         .cwiseAbs()
                         .maxCoeff());
  CHECK(worst <= 1e-12);
}

TEST_CASE("partial translation invariance with a zeroed phi block") {
  Rng rng(43);
  const Index n = 10, f = 3, m = 5;
  auto pts = random_points(n, f, rng);
  EdgeConvParams<double> conv = make_edgeconv<double>(f, std::array<Index, 1>{m}, EdgeFunction::centralized_asym, rng,
                                                      /*use_bn=*/false);
  conv.mlp[0].weight.matrix().topRows(f).setZero();  // phi block
  conv.mlp[0].bias.vec().setZero();

  auto g = knn_graph(pts, 4, true);  // input-space graph, itself translation invariant
  auto run = [&](const PointMatrix<double>& p) {
    Tape<double> t;
    Var x = t.input(tensor_from(p));
    auto bound = bind(t, conv);
    return Tensor64(
        t.value(edgeconv_forward(t, x, g, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false)));
  };
  Tensor64 base = run(pts);
  for (int rep = 0; rep < 5; ++rep) {
    PointMatrix<double> shifted = pts;
    Eigen::RowVector3d shift(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    shifted.rowwise() += shift;
    CHECK((run(shifted).vec() - base.vec()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("gradient check through edgeconv_forward for every spec and aggregation") {
  Rng rng(47);
  const Index n = 6, k = 3, f = 3, m = 4;
  EdgeFunctionSpec specs[] = {{EdgeFunction::global_only},      {EdgeFunction::neighbor_only},
                              {EdgeFunction::neighbor_gaussian, 0.9}, {EdgeFunction::local_only},
                              {EdgeFunction::centralized_asym}, {EdgeFunction::pair_concat}};
  for (const auto& spec : specs) {
    EdgeConvParams<double> conv = make_edgeconv<double>(f, std::array<Index, 1>{m}, spec.kind, rng, /*use_bn=*/true);
    for (Aggregation agg : {Aggregation::max, Aggregation::sum}) {
      Tensor64 w(Shape{n, m});
      for (Index i = 0; i < w.numel(); ++i) w[i] = rng.uniform() < 0.5 ? rng.uniform(0.5, 1.5) : -rng.uniform(0.5, 1.5);
      // the graph is fixed per draw (built from the unperturbed sample):
      // k-NN selection is a discrete choice, not part of the gradient
      NeighborGraph current_graph;
      auto sample = [&](int attempt) {
        Rng draw(1000 + 13 * static_cast<std::uint64_t>(attempt));
        Tensor64 x(Shape{n, f});
        for (Index i = 0; i < x.numel(); ++i) x[i] = draw.uniform(-1, 1);
        current_graph = knn_graph(PointMatrix<double>(x.matrix()), k, true);
        return x;
      };
      auto objective = [&](Tape<double>& t, Var v) {
        auto bound = bind(t, conv);
        Var y = edgeconv_forward(t, v, current_graph, bound, spec, agg, /*training=*/true);
        return sum_all(t, mul(t, y, t.constant(w)));
      };
      double err = grad_check_sampled<double>(objective, sample, 5, 1e-5, 1e-4);
      INFO(to_string(spec.kind), " ", to_string(agg));
      CHECK(err < 1e-6);
    }
  }
}
