#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "dgcnn/tensor.hpp"

namespace dgcnn {

struct BenchRow {
  std::string op;
  Index n = 0;
  Index k = 0;
  Index f = 0;
  int reps = 0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Times knn_graph, a single EdgeConv forward, and the full classifier
/// forward (static vs dynamic graph) over the (n, k) grid.
std::vector<BenchRow> run_bench(const std::vector<Index>& ns, const std::vector<Index>& ks, int reps);

/// CSV with header op,n,k,f,reps,median_ms,p95_ms.
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace dgcnn
