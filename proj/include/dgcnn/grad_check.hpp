#pragma once

#include <cmath>
#include <functional>

#include "dgcnn/ops.hpp"

namespace dgcnn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  /// Smallest conditioning margin seen while recording the objective; inputs
  /// within ~1e-4 of a max tie or activation kink make finite differences
  /// unreliable and should be resampled by the caller.
  double min_margin = 0.0;
};

/// Compares tape gradients of a scalar objective against central finite
/// differences, coordinate by coordinate.  Relative error uses
/// max(|analytic|, |numeric|, 1e-8) as the denominator.
///
/// `abs_floor` is the resolution of the finite-difference oracle itself:
/// coordinates where the two sides agree within it count as exact.  Central
/// differences carry round-off of order eps*|f|/(2*step), so objectives of
/// unit scale at step 1e-5 cannot certify disagreements below ~1e-11; model
/// -level sweeps pass 1e-10 while primitive tests keep the strict default.
template <typename S, typename F>
GradCheckResult grad_check(F&& f, const Tensor<S>& x, double step, double abs_floor = 0.0) {
  if (!x.all_finite()) throw NumericError("grad_check: input not finite");

  Tape<S> tape;
  Tensor<S> leaf = x;
  leaf.set_requires_grad(true);
  Var vx = tape.input(std::move(leaf));
  Var loss = f(tape, vx);
  if (tape.value(loss).numel() != 1) throw ContractError("grad_check: objective must be scalar");
  Gradients<S> grads = tape.backward(loss);
  Tensor<S> analytic = grads.wrt(vx);

  auto eval_at = [&](Index coord, double value) {
    Tensor<S> probe = x;
    probe[coord] = static_cast<S>(value);
    Tape<S> t;
    Var v = t.input(std::move(probe));
    Var l = f(t, v);
    double out = static_cast<double>(t.value(l)[0]);
    if (!std::isfinite(out)) throw NumericError("grad_check: objective produced a non-finite value");
    return out;
  };

  GradCheckResult result;
  result.min_margin = tape.min_margin();
  for (Index i = 0; i < x.numel(); ++i) {
    double base = static_cast<double>(x[i]);
    double numeric = (eval_at(i, base + step) - eval_at(i, base - step)) / (2.0 * step);
    double ana = static_cast<double>(analytic[i]);
    if (std::abs(ana - numeric) <= abs_floor) continue;
    double denom = std::max({std::abs(ana), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(ana - numeric) / denom);
  }
  return result;
}

/// Repeats grad_check over freshly sampled inputs, skipping draws whose
/// conditioning margin falls below `margin`; returns the worst error over
/// the accepted draws.
template <typename S, typename Sampler, typename F>
double grad_check_sampled(F&& f, Sampler&& sample, int draws, double step, double margin = 1e-4,
                          double abs_floor = 0.0, int max_attempts = 200) {
  double worst = 0.0;
  int accepted = 0;
  for (int attempt = 0; attempt < max_attempts && accepted < draws; ++attempt) {
    Tensor<S> x = sample(attempt);
    GradCheckResult r = grad_check(f, x, step, abs_floor);
    if (r.min_margin < margin) continue;  // too close to a tie/kink
    worst = std::max(worst, r.max_rel_error);
    ++accepted;
  }
  if (accepted < draws) throw NumericError("grad_check_sampled: could not find enough well-conditioned inputs");
  return worst;
}

}  // namespace dgcnn
