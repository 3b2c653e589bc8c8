#include <algorithm>
#include <chrono>

#include "dgcnn/bench.hpp"
#include "dgcnn/models.hpp"

namespace dgcnn {

namespace {

using Clock = std::chrono::steady_clock;

struct Sampleset {
  std::vector<double> ms;
  double median() const {
    std::vector<double> s = ms;
    std::sort(s.begin(), s.end());
    std::size_t mid = s.size() / 2;
    return s.size() % 2 ? s[mid] : 0.5 * (s[mid - 1] + s[mid]);
  }
  double p95() const {
    std::vector<double> s = ms;
    std::sort(s.begin(), s.end());
    std::size_t idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(s.size())));
    return s[std::min(s.size() - 1, idx == 0 ? 0 : idx - 1)];
  }
};

template <typename F>
Sampleset time_reps(int reps, F&& f) {
  Sampleset s;
  f();  // warm-up, untimed
  for (int r = 0; r < reps; ++r) {
    auto t0 = Clock::now();
    f();
    s.ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return s;
}

ClassifierConfig bench_config(Index k, bool dynamic) {
  ClassifierConfig cfg;
  cfg.k = k;
  cfg.edgeconv_widths = {16, 16, 32, 64};
  cfg.embed_width = 96;
  cfg.head_widths = {48, 24};
  cfg.num_classes = 4;
  cfg.dynamic_graph = dynamic;
  return cfg;
}

}  // namespace

std::vector<BenchRow> run_bench(const std::vector<Index>& ns, const std::vector<Index>& ks, int reps) {
  if (reps < 1) throw ParameterError("bench: reps must be positive");
  std::vector<BenchRow> rows;
  Rng rng(7041);
  for (Index n : ns) {
    PointMatrix<double> pts(n, 3);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < 3; ++j) pts(i, j) = rng.uniform(-1, 1);

    for (Index k : ks) {
      if (k > n) continue;
      {
        auto s = time_reps(reps, [&] { knn_graph(pts, k, true); });
        rows.push_back({"knn_graph", n, k, 3, reps, s.median(), s.p95()});
      }
      {
        Rng init(1);
        EdgeConvParams<double> conv =
            make_edgeconv<double>(3, std::array<Index, 1>{64}, EdgeFunction::centralized_asym, init);
        auto graph = knn_graph(pts, k, true);
        auto s = time_reps(reps, [&] {
          Tape<double> tape;
          Var x = tape.constant(Tensor64::from_matrix(pts));
          auto bound = bind(tape, conv);
          edgeconv_forward(tape, x, graph, bound, {EdgeFunction::centralized_asym}, Aggregation::max, false);
        });
        rows.push_back({"edgeconv_forward", n, k, 64, reps, s.median(), s.p95()});
      }
      for (bool dynamic : {false, true}) {
        ClassifierConfig cfg = bench_config(k, dynamic);
        Rng init(2);
        auto params = init_classifier<double>(cfg, init);
        auto s = time_reps(reps, [&] { classify_logits(pts, cfg, params); });
        rows.push_back({dynamic ? "classifier_forward_dynamic" : "classifier_forward_static", n, k, 3, reps,
                        s.median(), s.p95()});
      }
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "op,n,k,f,reps,median_ms,p95_ms\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.op << "," << r.n << "," << r.k << "," << r.f << "," << r.reps << "," << r.median_ms << "," << r.p95_ms
        << "\n";
}

}  // namespace dgcnn
