#pragma once

#include <string>
#include <vector>

namespace dgcnn {

struct VerifyResult {
  std::string family;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs the property-verification suite: permutation invariance, partial
/// translation invariance, the graph-independent reduction, gradient checks
/// (primitives and the end-to-end classifier loss), the k-NN brute-force
/// oracle, and the shared-MLP-vs-reference edge feature comparison.
/// `filter` keeps families whose name contains the substring.
std::vector<VerifyResult> run_verification(const std::string& filter = "");

bool all_passed(const std::vector<VerifyResult>& results);

}  // namespace dgcnn
