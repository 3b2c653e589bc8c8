#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dgcnn/mesh.hpp"

namespace dgcnn {

struct LabeledCloud {
  Points points;
  std::optional<Index> class_label;
  std::vector<Index> point_labels;  // empty when absent
  std::optional<Index> category;
};

struct Dataset {
  std::vector<LabeledCloud> clouds;
  std::string split;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;

  Index size() const { return static_cast<Index>(clouds.size()); }
};

/// Synthetic desk-scale benchmark.  Geometric primitives (sphere, cube,
/// cylinder, plane) plus a local-texture pair: two spheres carrying radial
/// sinusoidal fields of equal amplitude whose only difference is spatial
/// frequency.  Point-for-point statistics of the pair match; telling them
/// apart requires looking at neighborhoods.
struct SynthSpec {
  std::vector<std::string> classes{"sphere_smooth", "sphere_bumpy", "cube", "cylinder"};
  Index train_per_class = 100;
  Index val_per_class = 0;
  Index test_per_class = 25;
  Index points_per_cloud = 256;
  double texture_amplitude = 0.08;
  double smooth_frequency = 3.0;
  double bumpy_frequency = 40.0;
  int texture_components = 2;
  double surface_noise = 0.0;  // radial jitter for the plain primitives
  bool random_rotation = true;
  bool normalize = true;
};

struct SynthDataset {
  Dataset train, val, test;
};

namespace synth {

inline Eigen::RowVector3d random_unit(Rng& rng) {
  while (true) {
    Eigen::RowVector3d v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

/// Uniform rotation from a normalized random quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Points sphere(Index n, double noise, Rng& rng) {
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVector3d u = random_unit(rng);
    double r = 1.0 + (noise > 0 ? rng.normal(0.0, noise) : 0.0);
    out.row(i) = r * u;
  }
  return out;
}

/// Sphere with a superposition of radial sinusoids: r(u) = 1 + a/sqrt(m) *
/// sum sin(freq * (u . d_c) + phase_c).  Smooth and bumpy clouds share
/// amplitude and construction; only freq differs.
inline Points textured_sphere(Index n, double amplitude, double frequency, int components, Rng& rng) {
  std::vector<Eigen::RowVector3d> dirs;
  std::vector<double> phases;
  for (int c = 0; c < components; ++c) {
    dirs.push_back(random_unit(rng));
    phases.push_back(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
  }
  double scale = amplitude / std::sqrt(static_cast<double>(std::max(components, 1)));
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVector3d u = random_unit(rng);
    double dr = 0.0;
    for (int c = 0; c < components; ++c)
      dr += std::sin(frequency * u.dot(dirs[static_cast<std::size_t>(c)]) + phases[static_cast<std::size_t>(c)]);
    out.row(i) = (1.0 + scale * dr) * u;
  }
  return out;
}

inline Points cube(Index n, double noise, Rng& rng) {
  const double half = 0.8;
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    Index face = static_cast<Index>(rng.below(6));
    double a = rng.uniform(-half, half), b = rng.uniform(-half, half);
    double off = (face % 2 == 0 ? half : -half) + (noise > 0 ? rng.normal(0.0, noise) : 0.0);
    Eigen::RowVector3d p;
    switch (face / 2) {
      case 0: p = {off, a, b}; break;
      case 1: p = {a, off, b}; break;
      default: p = {a, b, off}; break;
    }
    out.row(i) = p;
  }
  return out;
}

inline Points cylinder(Index n, double noise, Rng& rng) {
  const double radius = 0.5, height = 1.6;
  const double side_area = 2 * 3.14159265358979323846 * radius * height;
  const double cap_area = 3.14159265358979323846 * radius * radius;
  const double total = side_area + 2 * cap_area;
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    double pick = rng.uniform(0.0, total);
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    Eigen::RowVector3d p;
    if (pick < side_area) {
      double z = rng.uniform(-height / 2, height / 2);
      double r = radius + (noise > 0 ? rng.normal(0.0, noise) : 0.0);
      p = {r * std::cos(theta), r * std::sin(theta), z};
    } else {
      double r = radius * std::sqrt(rng.uniform());  // uniform over the disc
      double z = (pick < side_area + cap_area ? height / 2 : -height / 2) +
                 (noise > 0 ? rng.normal(0.0, noise) : 0.0);
      p = {r * std::cos(theta), r * std::sin(theta), z};
    }
    out.row(i) = p;
  }
  return out;
}

inline Points plane(Index n, double noise, Rng& rng) {
  Points out(n, 3);
  for (Index i = 0; i < n; ++i)
    out.row(i) = Eigen::RowVector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                    noise > 0 ? rng.normal(0.0, noise) : 0.0);
  return out;
}

/// Cylinder with per-point part labels: 0 = lateral surface, 1 = top cap,
/// 2 = bottom cap.  The desk-scale segmentation task.
inline std::pair<Points, std::vector<Index>> cylinder_parts(Index n, double noise, Rng& rng) {
  const double radius = 0.5, height = 1.6;
  const double side_area = 2 * 3.14159265358979323846 * radius * height;
  const double cap_area = 3.14159265358979323846 * radius * radius;
  const double total = side_area + 2 * cap_area;
  Points pts(n, 3);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double pick = rng.uniform(0.0, total);
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double jitter = noise > 0 ? rng.normal(0.0, noise) : 0.0;
    if (pick < side_area) {
      labels[static_cast<std::size_t>(i)] = 0;
      pts.row(i) = Eigen::RowVector3d((radius + jitter) * std::cos(theta), (radius + jitter) * std::sin(theta),
                                      rng.uniform(-height / 2, height / 2));
    } else {
      bool top = pick < side_area + cap_area;
      labels[static_cast<std::size_t>(i)] = top ? 1 : 2;
      double r = radius * std::sqrt(rng.uniform());
      pts.row(i) = Eigen::RowVector3d(r * std::cos(theta), r * std::sin(theta),
                                      (top ? height / 2 : -height / 2) + jitter);
    }
  }
  return {std::move(pts), std::move(labels)};
}

}  // namespace synth

/// Raw cloud (optionally with per-point labels) from a named generator,
/// before rotation/normalization.
inline std::pair<Points, std::vector<Index>> synth_cloud_labeled(const std::string& generator, const SynthSpec& spec,
                                                                 Rng& rng) {
  const Index n = spec.points_per_cloud;
  if (generator == "sphere") return {synth::sphere(n, spec.surface_noise, rng), {}};
  if (generator == "sphere_smooth")
    return {synth::textured_sphere(n, spec.texture_amplitude, spec.smooth_frequency, spec.texture_components, rng),
            {}};
  if (generator == "sphere_bumpy")
    return {synth::textured_sphere(n, spec.texture_amplitude, spec.bumpy_frequency, spec.texture_components, rng),
            {}};
  if (generator == "cube") return {synth::cube(n, spec.surface_noise, rng), {}};
  if (generator == "cylinder") return {synth::cylinder(n, spec.surface_noise, rng), {}};
  if (generator == "plane") return {synth::plane(n, spec.surface_noise, rng), {}};
  if (generator == "cylinder_parts") return synth::cylinder_parts(n, spec.surface_noise, rng);
  throw ParameterError("synth_cloud: unknown generator '" + generator + "'");
}

inline Points synth_cloud(const std::string& generator, const SynthSpec& spec, Rng& rng) {
  return synth_cloud_labeled(generator, spec, rng).first;
}

inline void validate(const SynthSpec& spec) {
  if (spec.classes.empty()) throw ParameterError("synth_dataset: no classes");
  if (spec.points_per_cloud < 1) throw ParameterError("synth_dataset: points_per_cloud must be positive");
  bool smooth = false, bumpy = false;
  for (const auto& c : spec.classes) {
    smooth = smooth || c == "sphere_smooth";
    bumpy = bumpy || c == "sphere_bumpy";
  }
  if (smooth && bumpy && !(spec.texture_amplitude > 0.0))
    throw ParameterError("synth_dataset: smooth and bumpy spheres are indistinguishable at zero texture amplitude");
  if (smooth && bumpy && spec.smooth_frequency == spec.bumpy_frequency)
    throw ParameterError("synth_dataset: smooth and bumpy spheres need distinct frequencies");
}

/// Deterministic in (spec, seed): every cloud draws from its own stream
/// keyed by (split, class, index), so splits are reproducible and disjoint.
inline SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng master(seed);
  SynthDataset out;
  struct SplitPlan {
    Dataset* dataset;
    Index per_class;
    std::uint64_t stream;
    const char* name;
  };
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  SplitPlan plans[] = {{&out.train, spec.train_per_class, 1, "train"},
                       {&out.val, spec.val_per_class, 2, "val"},
                       {&out.test, spec.test_per_class, 3, "test"}};
  for (auto& plan : plans) {
    plan.dataset->seed = seed;
    plan.dataset->class_names = spec.classes;
    for (Index label = 0; label < static_cast<Index>(spec.classes.size()); ++label) {
      for (Index i = 0; i < plan.per_class; ++i) {
        Rng stream = master.fork(plan.stream * 1000003ull + static_cast<std::uint64_t>(label) * 7919ull +
                                 static_cast<std::uint64_t>(i));
        auto [pts, point_labels] = synth_cloud_labeled(spec.classes[static_cast<std::size_t>(label)], spec, stream);
        if (spec.random_rotation) pts = pts * synth::random_rotation(stream).transpose();
        if (spec.normalize) normalize_unit_sphere(pts);
        LabeledCloud cloud;
        cloud.points = std::move(pts);
        cloud.class_label = label;
        cloud.point_labels = std::move(point_labels);
        cloud.category = label;
        plan.dataset->clouds.push_back(std::move(cloud));
      }
    }
  }
  return out;
}

}  // namespace dgcnn
