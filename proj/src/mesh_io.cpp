#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "dgcnn/mesh.hpp"

namespace dgcnn {

namespace {

struct LineReader {
  std::istream& in;
  const std::string& name;
  int line_no = 0;

  /// Next non-empty, non-comment line.  Returns false at EOF.
  bool next(std::string& out) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      bool blank = line.find_first_not_of(" \t\r\n") == std::string::npos;
      if (!blank) {
        out = line;
        return true;
      }
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(name + ":" + std::to_string(line_no) + ": " + what);
  }
};

}  // namespace

Mesh parse_off(std::istream& in, const std::string& name) {
  LineReader reader{in, name};
  std::string line;
  if (!reader.next(line)) reader.fail("empty file, expected OFF header");

  std::istringstream header(line);
  std::string magic;
  header >> magic;
  if (magic != "OFF") reader.fail("expected OFF header, got '" + magic + "'");

  Index nv = 0, nf = 0, ne = 0;
  // counts may share the header line in some exporters
  if (!(header >> nv >> nf >> ne)) {
    if (!reader.next(line)) reader.fail("missing counts line");
    std::istringstream counts(line);
    if (!(counts >> nv >> nf >> ne)) reader.fail("malformed counts line '" + line + "'");
  }
  if (nv < 0 || nf < 0) reader.fail("negative element count");

  Mesh mesh;
  mesh.vertices.resize(nv, 3);
  for (Index v = 0; v < nv; ++v) {
    if (!reader.next(line)) reader.fail("file truncated, expected vertex " + std::to_string(v));
    std::istringstream row(line);
    double x, y, z;
    if (!(row >> x >> y >> z)) reader.fail("malformed vertex line '" + line + "'");
    mesh.vertices.row(v) << x, y, z;
  }

  std::vector<std::array<Index, 3>> tris;
  tris.reserve(static_cast<std::size_t>(nf));
  for (Index f = 0; f < nf; ++f) {
    if (!reader.next(line)) reader.fail("file truncated, expected face " + std::to_string(f));
    std::istringstream row(line);
    Index arity = 0;
    if (!(row >> arity) || arity < 3) reader.fail("malformed face line '" + line + "'");
    std::vector<Index> poly(static_cast<std::size_t>(arity));
    for (Index i = 0; i < arity; ++i) {
      if (!(row >> poly[static_cast<std::size_t>(i)])) reader.fail("face lists fewer indices than its arity");
      Index idx = poly[static_cast<std::size_t>(i)];
      if (idx < 0 || idx >= nv)
        reader.fail("vertex index " + std::to_string(idx) + " out of range [0," + std::to_string(nv) + ")");
    }
    for (Index i = 1; i + 1 < arity; ++i)  // fan triangulation
      tris.push_back({poly[0], poly[static_cast<std::size_t>(i)], poly[static_cast<std::size_t>(i + 1)]});
  }

  mesh.faces.resize(static_cast<Index>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    mesh.faces.row(static_cast<Index>(i)) << tris[i][0], tris[i][1], tris[i][2];
  return mesh;
}

Mesh load_off_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file: " + path);
  return parse_off(in, path);
}

Points sample_mesh(const Mesh& mesh, Index n, Rng& rng) {
  const Index nf = mesh.faces.rows();
  if (nf < 1) throw DataError("sample_mesh: mesh has no faces");

  std::vector<double> cumulative(static_cast<std::size_t>(nf));
  double total = 0.0;
  for (Index f = 0; f < nf; ++f) {
    Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
    Eigen::RowVector3d ab = mesh.vertices.row(mesh.faces(f, 1)) - a;
    Eigen::RowVector3d ac = mesh.vertices.row(mesh.faces(f, 2)) - a;
    total += 0.5 * ab.cross(ac).norm();
    cumulative[static_cast<std::size_t>(f)] = total;
  }
  if (!(total > 0.0)) throw DataError("sample_mesh: all faces are degenerate");

  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    double r = rng.uniform() * total;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), r);
    Index f = static_cast<Index>(it - cumulative.begin());
    if (f >= nf) f = nf - 1;
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {  // fold into the triangle
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
    Eigen::RowVector3d b = mesh.vertices.row(mesh.faces(f, 1));
    Eigen::RowVector3d c = mesh.vertices.row(mesh.faces(f, 2));
    out.row(i) = a + u * (b - a) + v * (c - a);
  }
  return out;
}

NormalizeRecord normalize_unit_sphere(Points& points) {
  if (points.rows() < 1) throw DataError("normalize_unit_sphere: empty point set");
  NormalizeRecord rec;
  rec.center = points.colwise().mean();
  points.rowwise() -= rec.center;
  rec.scale = std::sqrt(points.rowwise().squaredNorm().maxCoeff());
  if (!(rec.scale > 0.0)) throw DataError("normalize_unit_sphere: all points coincide, scale is zero");
  points /= rec.scale;
  return rec;
}

XyzCloud load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file: " + path);
  std::vector<double> coords;
  std::vector<Index> labels;
  std::string line;
  int line_no = 0;
  bool has_labels = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream row(line);
    double x, y, z;
    if (!(row >> x)) continue;  // blank line
    if (!(row >> y >> z)) throw ParseError(path + ":" + std::to_string(line_no) + ": expected 3 coordinates");
    coords.insert(coords.end(), {x, y, z});
    long long lab;
    if (row >> lab) {
      has_labels = true;
      labels.push_back(static_cast<Index>(lab));
    } else if (has_labels) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": missing label column");
    }
  }
  if (coords.empty()) throw DataError("point file is empty: " + path);
  if (has_labels && labels.size() * 3 != coords.size())
    throw ParseError(path + ": label column present on some lines only");

  XyzCloud cloud;
  cloud.points.resize(static_cast<Index>(coords.size() / 3), 3);
  for (Index i = 0; i < cloud.points.rows(); ++i)
    cloud.points.row(i) << coords[3 * i], coords[3 * i + 1], coords[3 * i + 2];
  cloud.labels = std::move(labels);
  return cloud;
}

void save_xyz(const std::string& path, const Points& points, const std::vector<Index>* labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write point file: " + path);
  out.precision(17);
  for (Index i = 0; i < points.rows(); ++i) {
    out << points(i, 0) << " " << points(i, 1) << " " << points(i, 2);
    if (labels) out << " " << (*labels)[static_cast<std::size_t>(i)];
    out << "\n";
  }
}

}  // namespace dgcnn
