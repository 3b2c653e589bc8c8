#pragma once

#include <algorithm>

#include "dgcnn/mesh.hpp"
#include "dgcnn/rng.hpp"

namespace dgcnn {

/// Training-time perturbations: one global scale, one global shift, and
/// per-point clipped Gaussian jitter.  Every range is configurable; the
/// defaults are implementation choices, not quoted values.
struct AugmentOptions {
  bool enabled = true;
  double scale_lo = 0.66;
  double scale_hi = 1.5;
  double shift_range = 0.2;    // per-axis uniform in [-range, range]
  double jitter_sigma = 0.01;  // per-coordinate normal
  double jitter_clip = 0.05;
};

inline Points augment(const Points& points, const AugmentOptions& opt, Rng& rng) {
  if (!opt.enabled) return points;
  Points out = points;
  double s = rng.uniform(opt.scale_lo, opt.scale_hi);
  out *= s;
  Eigen::RowVector3d shift(rng.uniform(-opt.shift_range, opt.shift_range),
                           rng.uniform(-opt.shift_range, opt.shift_range),
                           rng.uniform(-opt.shift_range, opt.shift_range));
  out.rowwise() += shift;
  if (opt.jitter_sigma > 0.0) {
    for (Index i = 0; i < out.rows(); ++i)
      for (Index j = 0; j < out.cols(); ++j) {
        double jitter = rng.normal(0.0, opt.jitter_sigma);
        out(i, j) += std::clamp(jitter, -opt.jitter_clip, opt.jitter_clip);
      }
  }
  return out;
}

}  // namespace dgcnn
