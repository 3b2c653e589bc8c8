#include <chrono>
#include <cmath>
#include <sstream>
#include <string_view>

#include "dgcnn/grad_check.hpp"
#include "dgcnn/models.hpp"
#include "dgcnn/verify.hpp"

namespace dgcnn {

namespace {

using Clock = std::chrono::steady_clock;

PointMatrix<double> random_points(Index n, Index f, Rng& rng, double scale = 1.0) {
  PointMatrix<double> x(n, f);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < f; ++j) x(i, j) = rng.uniform(-scale, scale);
  return x;
}

Tensor64 random_weights(Shape shape, Rng& rng) {
  Tensor64 t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) {
    double mag = rng.uniform(0.5, 1.5);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Tensor64 random_values(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

ClassifierConfig fixture_config() {
  ClassifierConfig cfg;
  cfg.k = 8;
  cfg.edgeconv_widths = {8, 8, 16};
  cfg.embed_width = 24;
  cfg.head_widths = {16, 8};
  cfg.num_classes = 5;
  return cfg;
}

/// (a) classification logits bitwise-invariant under random permutations.
VerifyResult verify_permutation() {
  VerifyResult r{"permutation-invariance", true, "", 0};
  StrictModeGuard strict(true);
  int failures = 0;
  for (int fixture = 0; fixture < 2 && r.passed; ++fixture) {
    Rng rng(400 + static_cast<std::uint64_t>(fixture));
    auto cfg = fixture_config();
    auto params = init_classifier<double>(cfg, rng);
    const Index n = 64;
    auto cloud = random_points(n, 3, rng);
    Eigen::VectorXd base = classify_logits(cloud, cfg, params);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<Index> perm(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
      rng.shuffle(perm);
      PointMatrix<double> shuffled(n, 3);
      for (Index i = 0; i < n; ++i) shuffled.row(perm[static_cast<std::size_t>(i)]) = cloud.row(i);
      Eigen::VectorXd out = classify_logits(shuffled, cfg, params);
      if (!(out.array() == base.array()).all()) ++failures;
    }
  }
  if (failures) {
    r.passed = false;
    r.detail = std::to_string(failures) + " of 200 permutations changed the logits";
  } else {
    r.detail = "2 fixtures x 100 permutations, bitwise equal";
  }
  return r;
}

/// (b) centralized edge function with a zeroed phi block is translation
/// invariant within 1e-9.
VerifyResult verify_translation() {
  VerifyResult r{"translation-invariance", true, "", 0};
  Rng rng(410);
  const Index n = 32, f = 3, m = 12, k = 6;
  EdgeConvParams<double> conv =
      make_edgeconv<double>(f, std::array<Index, 1>{m}, EdgeFunction::centralized_asym, rng, /*use_bn=*/false);
  conv.mlp[0].weight.matrix().topRows(f).setZero();  // phi block
  conv.mlp[0].bias.vec().setZero();
  auto pts = random_points(n, f, rng);
  auto graph = knn_graph(pts, k, true);
  auto run = [&](const PointMatrix<double>& p) {
    Tape<double> t;
    Var x = t.constant(Tensor64::from_matrix(p));
    auto bound = bind(t, conv);
    return Tensor64(t.value(edgeconv_forward(t, x, graph, bound, {EdgeFunction::centralized_asym}, Aggregation::max,
                                             false)));
  };
  Tensor64 base = run(pts);
  double worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    // dyadic translations keep the input-space graph exactly invariant
    Eigen::RowVector3d shift(static_cast<double>(rng.below(64)) * 0.125 - 4.0,
                             static_cast<double>(rng.below(64)) * 0.125 - 4.0,
                             static_cast<double>(rng.below(64)) * 0.125 - 4.0);
    PointMatrix<double> moved = pts;
    moved.rowwise() += shift;
    worst = std::max(worst, (run(moved).vec() - base.vec()).cwiseAbs().maxCoeff());
  }
  std::ostringstream os;
  os << "20 translations, max deviation " << worst;
  r.detail = os.str();
  r.passed = worst <= 1e-9;
  return r;
}

/// (c) global-only edge function ignores the graph entirely.
VerifyResult verify_reduction() {
  VerifyResult r{"pointnet-reduction", true, "", 0};
  Rng rng(420);
  const Index n = 40;
  auto pts = random_points(n, 3, rng);
  EdgeConvParams<double> conv =
      make_edgeconv<double>(3, std::array<Index, 1>{10}, EdgeFunction::global_only, rng, /*use_bn=*/false);
  auto run = [&](const NeighborGraph& g) {
    Tape<double> t;
    Var x = t.constant(Tensor64::from_matrix(pts));
    auto bound = bind(t, conv);
    return Tensor64(t.value(edgeconv_forward(t, x, g, bound, {EdgeFunction::global_only}, Aggregation::max, false)));
  };
  Tensor64 base = run(knn_graph(pts, 1, true));
  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    Index k = 1 + static_cast<Index>(rng.below(12));
    bool self = rng.uniform() < 0.5;
    auto decoy = random_points(n, 3, rng);  // a graph from unrelated geometry
    worst = std::max(worst, (run(knn_graph(decoy, k, self)).vec() - base.vec()).cwiseAbs().maxCoeff());
  }
  std::ostringstream os;
  os << "10 random graphs, max deviation " << worst;
  r.detail = os.str();
  r.passed = worst <= 1e-12;
  return r;
}

/// Central-difference checks for each primitive and the end-to-end
/// classifier loss over all parameters.
VerifyResult verify_gradients() {
  VerifyResult r{"gradient-checks", true, "", 0};
  Rng rng(430);
  const double step = 1e-5, tol = 1e-6;
  double worst = 0;
  std::string failed;

  auto sampler = [&rng](Shape shape, double scale = 1.0) {
    return [&rng, shape, scale](int) {
      Tensor64 t(shape);
      for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
      return t;
    };
  };
  auto record = [&](const char* name, double err) {
    worst = std::max(worst, err);
    if (err >= tol && failed.empty()) failed = name;
  };

  {
    Tensor64 b = random_values({4, 3}, rng);
    Tensor64 w = random_weights({5, 3}, rng);
    record("matmul", grad_check_sampled<double>(
                         [&](Tape<double>& t, Var v) {
                           return sum_all(t, mul(t, matmul(t, v, t.constant(b)), t.constant(w)));
                         },
                         sampler({5, 4}), 10, step));
  }
  {
    Tensor64 other = random_values({7}, rng);
    Tensor64 w = random_weights({7}, rng);
    record("elementwise", grad_check_sampled<double>(
                              [&](Tape<double>& t, Var v) {
                                Var o = t.constant(other);
                                Var z = mul(t, sub(t, add(t, v, o), scale(t, v, 0.25)), v);
                                return sum_all(t, mul(t, z, t.constant(w)));
                              },
                              sampler({7}), 10, step));
  }
  {
    Tensor64 w = random_weights({9}, rng);
    record("leaky_relu", grad_check_sampled<double>(
                             [&](Tape<double>& t, Var v) {
                               return sum_all(t, mul(t, leaky_relu(t, v, 0.2), t.constant(w)));
                             },
                             sampler({9}), 10, step));
    record("exp", grad_check_sampled<double>(
                      [&](Tape<double>& t, Var v) { return sum_all(t, mul(t, dgcnn::exp(t, v), t.constant(w))); },
                      sampler({9}), 10, step));
  }
  {
    Tensor64 wm = random_weights({4}, rng);
    Tensor64 ws = random_weights({5}, rng);
    record("reductions", grad_check_sampled<double>(
                             [&](Tape<double>& t, Var v) {
                               Var m = max_over_axis(t, v, 0).values;
                               Var s = sum_over_axis(t, v, 1);
                               return add(t, sum_all(t, mul(t, m, t.constant(wm))),
                                          sum_all(t, mul(t, s, t.constant(ws))));
                             },
                             sampler({5, 4}), 10, step));
  }
  {
    Tensor64 w = random_weights({4, 6}, rng);
    record("concat+gather", grad_check_sampled<double>(
                                [&](Tape<double>& t, Var v) {
                                  Var g = gather_rows(t, v, {2, 0, 2, 1});
                                  return sum_all(t, mul(t, concat(t, {g, g}, 1), t.constant(w)));
                                },
                                sampler({4, 3}), 10, step));
  }
  record("softmax_cross_entropy",
         grad_check_sampled<double>(
             [](Tape<double>& t, Var v) { return softmax_cross_entropy(t, v, {1, 3, 0}); }, sampler({3, 4}, 2.0), 10,
             step));
  {
    Tensor64 gamma = random_weights({3}, rng);
    Tensor64 beta_t = random_values({3}, rng);
    Tensor64 w = random_weights({6, 3}, rng);
    record("batch_norm", grad_check_sampled<double>(
                             [&](Tape<double>& t, Var v) {
                               Var gv = t.input(Tensor64(gamma).set_requires_grad(true));
                               Var bv = t.input(Tensor64(beta_t).set_requires_grad(true));
                               Tensor64 rm = Tensor64::zeros({3});
                               Tensor64 rv = Tensor64::ones({3});
                               Var y = batch_norm(t, v, gv, bv, rm, rv, true, 0.9, 1e-5);
                               return sum_all(t, mul(t, y, t.constant(w)));
                             },
                             sampler({6, 3}), 10, step));
  }
  {
    Tensor64 w = random_weights({12}, rng);
    record("dropout", grad_check_sampled<double>(
                          [&](Tape<double>& t, Var v) {
                            Rng mask_rng(42);
                            return sum_all(t, mul(t, dropout(t, v, 0.6, true, mask_rng), t.constant(w)));
                          },
                          sampler({12}), 10, step));
  }

  // end-to-end classifier loss: finite differences over every parameter
  {
    ClassifierConfig cfg;
    cfg.k = 3;
    cfg.edgeconv_widths = {4, 6};
    cfg.embed_width = 8;
    cfg.head_widths = {6};
    cfg.num_classes = 3;
    cfg.dropout_keep = 1.0;
    Rng init(431);
    auto params = init_classifier<double>(cfg, init);
    const Index n = 7, batch = 6;
    std::vector<Index> labels{1, 2, 0, 2, 1, 0};

    auto loss_value = [&](const Tensor64& pts) {
      Tape<double> t;
      Var x = t.constant(pts);
      auto bound = bind(t, params);
      Rng drop(1);
      Var logits = classifier_forward(t, x, batch, n, cfg, bound, true, &drop);
      return t.value(softmax_cross_entropy(t, logits, labels))[0];
    };

    // margins have different safe scales per kind: kink and selection gaps
    // become unreliable below ~1e-4 (the spec's exclusion zone), batch-norm
    // curvature needs variances above ~1e-3 to keep FD truncation in check
    auto well_conditioned = [](const Tape<double>& t) {
      for (const auto& node : t.nodes()) {
        double limit = std::string_view(node.op) == "batch_norm" ? 1e-3 : 1e-4;
        if (node.margin < limit) return false;
      }
      return true;
    };

    int accepted = 0;
    double e2e_worst = 0;
    for (int attempt = 0; attempt < 60 && accepted < 10; ++attempt) {
      Rng draw(900 + 11 * static_cast<std::uint64_t>(attempt));
      Tensor64 pts(Shape{batch * n, 3});
      for (Index i = 0; i < pts.numel(); ++i) pts[i] = draw.uniform(-1, 1);

      Tape<double> t;
      Var x = t.constant(pts);
      auto bound = bind(t, params);
      Rng drop(1);
      Var logits = classifier_forward(t, x, batch, n, cfg, bound, true, &drop);
      Var loss = softmax_cross_entropy(t, logits, labels);
      auto grads = t.backward(loss);
      if (!well_conditioned(t)) continue;  // near a selection tie, kink, or degenerate batch variance

      Bindings<double> bindings;
      collect_bindings(bound, bindings);
      for (auto& [tensor, var] : bindings) {
        const Tensor64& analytic = grads.wrt(var);
        for (Index i = 0; i < tensor->numel(); ++i) {
          double saved = (*tensor)[i];
          (*tensor)[i] = saved + step;
          double fp = loss_value(pts);
          (*tensor)[i] = saved - step;
          double fm = loss_value(pts);
          (*tensor)[i] = saved;
          double numeric = (fp - fm) / (2 * step);
          // agreement within the oracle's own round-off resolution is exact
          if (std::abs(analytic[i] - numeric) <= 1e-10) continue;
          double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
          e2e_worst = std::max(e2e_worst, std::abs(analytic[i] - numeric) / denom);
        }
      }
      ++accepted;
    }
    if (accepted < 10) {
      r.passed = false;
      r.detail = "end-to-end: not enough well-conditioned draws";
      return r;
    }
    record("classifier-end-to-end", e2e_worst);
  }

  std::ostringstream os;
  os << "max relative error " << worst;
  if (!failed.empty()) os << " (first failure: " << failed << ")";
  r.detail = os.str();
  r.passed = failed.empty();
  return r;
}

NeighborGraph oracle_knn(const PointMatrix<double>& x, Index k, bool self_loop) {
  const Index n = x.rows();
  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.self_loop = self_loop;
  g.neighbors.resize(n, k);
  for (Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Index>> others;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double d = 0;
      for (Index c = 0; c < x.cols(); ++c) {
        double diff = x(i, c) - x(j, c);
        d += diff * diff;
      }
      others.emplace_back(d, j);
    }
    std::sort(others.begin(), others.end());
    Index slot = 0;
    if (self_loop) g.neighbors(i, slot++) = i;
    for (Index r = 0; slot < k; ++r) g.neighbors(i, slot++) = others[static_cast<std::size_t>(r)].second;
  }
  return g;
}

/// Exhaustive agreement with the sort-based oracle for all n <= 64 and all
/// valid k, both self-loop conventions.
VerifyResult verify_knn_oracle() {
  VerifyResult r{"knn-oracle", true, "", 0};
  Rng rng(440);
  long checked = 0;
  for (int rep = 0; rep < 100 && r.passed; ++rep) {
    Index n = 1 + static_cast<Index>(rep % 64);
    Index f = 1 + static_cast<Index>(rng.below(6));
    PointMatrix<double> pts;
    if (rep % 3 == 2) {
      // small integer lattices carry many exact distance ties, so the
      // (distance, index) tie rule actually decides rows here
      pts = PointMatrix<double>(n, f);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < f; ++j) pts(i, j) = static_cast<double>(rng.below(3));
    } else {
      pts = random_points(n, f, rng);
    }
    for (Index k = 1; k <= n && r.passed; ++k) {
      if (!(knn_graph(pts, k, true) == oracle_knn(pts, k, true))) {
        r.passed = false;
        r.detail = "mismatch at n=" + std::to_string(n) + " k=" + std::to_string(k) + " self_loop=true";
      }
      ++checked;
      if (k <= n - 1) {
        if (!(knn_graph(pts, k, false) == oracle_knn(pts, k, false))) {
          r.passed = false;
          r.detail = "mismatch at n=" + std::to_string(n) + " k=" + std::to_string(k) + " self_loop=false";
        }
        ++checked;
      }
    }
  }
  if (r.passed) r.detail = std::to_string(checked) + " graph constructions match the oracle";
  return r;
}

/// Shared-MLP path vs the reference asymmetric edge feature on 1000 edges.
VerifyResult verify_mlp_reference() {
  VerifyResult r{"mlp-vs-reference", true, "", 0};
  Rng rng(450);
  const Index f = 6, m = 8;
  PointMatrix<double> theta = random_points(f, m, rng);
  PointMatrix<double> phi = random_points(f, m, rng);
  EdgeConvParams<double> conv;
  DenseLayerParams<double> layer;
  PointMatrix<double> stacked(2 * f, m);
  stacked.topRows(f) = phi;
  stacked.bottomRows(f) = theta;
  layer.weight = Tensor64::from_matrix(stacked).set_requires_grad(true);
  layer.bias = Tensor64::zeros({m}).set_requires_grad(true);
  layer.use_bn = false;
  layer.use_activation = true;
  layer.activation_slope = 0.0;  // exact ReLU, as in the reference form
  conv.mlp.push_back(std::move(layer));

  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    auto pts = random_points(100, f, rng);
    auto g = knn_graph(pts, 1, false);
    Tape<double> t;
    Var x = t.constant(Tensor64::from_matrix(pts));
    auto bound = bind(t, conv);
    Var y = edgeconv_forward(t, x, g, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false);
    for (Index i = 0; i < 100; ++i) {
      Eigen::RowVectorX<double> xi = pts.row(i), xj = pts.row(g.neighbors(i, 0));
      auto ref = asym_edge_feature(xi, xj, theta, phi);
      worst = std::max(worst, (t.value(y).matrix().row(i) - ref).cwiseAbs().maxCoeff());
    }
  }
  std::ostringstream os;
  os << "1000 edges, max absolute deviation " << worst;
  r.detail = os.str();
  r.passed = worst <= 1e-12;
  return r;
}

}  // namespace

std::vector<VerifyResult> run_verification(const std::string& filter) {
  std::vector<std::pair<std::string, VerifyResult (*)()>> families = {
      {"permutation-invariance", &verify_permutation}, {"translation-invariance", &verify_translation},
      {"pointnet-reduction", &verify_reduction},       {"gradient-checks", &verify_gradients},
      {"knn-oracle", &verify_knn_oracle},              {"mlp-vs-reference", &verify_mlp_reference},
  };
  std::vector<VerifyResult> results;
  for (auto& [name, fn] : families) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    auto t0 = Clock::now();
    VerifyResult r = fn();
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

bool all_passed(const std::vector<VerifyResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

}  // namespace dgcnn
