#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>

#include "dgcnn/error.hpp"
#include "dgcnn/rng.hpp"
#include "dgcnn/tensor.hpp"

namespace dgcnn {

template <typename S>
using PointMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Points = PointMatrix<double>;
using Faces = Eigen::Matrix<Index, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Triangle mesh; polygonal faces are fan-triangulated at load time.
struct Mesh {
  Points vertices;  // v x 3
  Faces faces;      // f x 3, vertex indices
};

/// Parses an OFF file (header line, counts line, vertices, faces).  Parse
/// failures throw ParseError naming the offending line.
Mesh load_off_mesh(const std::string& path);
Mesh parse_off(std::istream& in, const std::string& name);

/// Uniform surface sampling: faces chosen with probability proportional to
/// area, points placed by folded barycentric coordinates.
Points sample_mesh(const Mesh& mesh, Index n, Rng& rng);

struct NormalizeRecord {
  Eigen::RowVector3d center;
  double scale;
};

/// Centers at the centroid and divides by the max point norm, so the result
/// fits the unit sphere with max norm exactly 1 (up to rounding).
NormalizeRecord normalize_unit_sphere(Points& points);

/// Plain whitespace-delimited XYZ loader; a 4th column, when present, is
/// returned as per-point integer labels.
struct XyzCloud {
  Points points;
  std::vector<Index> labels;  // empty when the file has no label column
};
XyzCloud load_xyz(const std::string& path);
void save_xyz(const std::string& path, const Points& points, const std::vector<Index>* labels = nullptr);

}  // namespace dgcnn
