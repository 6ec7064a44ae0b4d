#include "mbf/metaball.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mbf/error.hpp"

namespace mbf {

namespace {

constexpr double kSingularRel = 1e-12;
constexpr int kProbeCells = 32;
constexpr double kBigValue = 1e300;

double sum_terms(const MetaballModel& model, const Vec3& p) {
  double f = 0.0;
  for (const auto& cp : model.points()) f += cp.k / (p - cp.x).squaredNorm();
  return f;
}

Vec3 position_centroid(const MetaballModel& model) {
  Vec3 c = Vec3::Zero();
  for (const auto& cp : model.points()) c += cp.x;
  return c / static_cast<double>(model.size());
}

double finite_sample(double v) {
  if (std::isnan(v)) return -kBigValue;
  return std::clamp(v, -kBigValue, kBigValue);
}

}  // namespace

MetaballModel::MetaballModel(std::vector<ControlPoint> points) : points_(std::move(points)) {
  require(!points_.empty(), "metaball model needs at least one control point");
  for (const auto& cp : points_) {
    require(std::isfinite(cp.k) && cp.x.allFinite(), "metaball control point has non-finite parameters");
  }
}

double MetaballModel::scale() const {
  if (points_.empty()) return 0.0;
  const Vec3 c = position_centroid(*this);
  double r = 0.0;
  for (const auto& cp : points_) r = std::max(r, (cp.x - c).norm() + std::sqrt(std::abs(cp.k)));
  return r;
}

MetaballModel MetaballModel::translated(const Vec3& t) const {
  auto pts = points_;
  for (auto& cp : pts) cp.x += t;
  return MetaballModel(std::move(pts));
}

MetaballModel MetaballModel::scaled(double s) const {
  auto pts = points_;
  for (auto& cp : pts) {
    cp.x *= s;
    cp.k *= s * s;
  }
  return MetaballModel(std::move(pts));
}

double evaluate(const MetaballModel& model, const Vec3& p) {
  const double guard = kSingularRel * model.scale();
  const double guard2 = guard * guard;
  double f = 0.0;
  for (const auto& cp : model.points()) {
    const double r2 = (p - cp.x).squaredNorm();
    if (r2 < guard2 || r2 == 0.0) fail(Errc::singularity, "evaluation point coincides with a control point");
    f += cp.k / r2;
  }
  return f;
}

bool contains(const MetaballModel& model, const Vec3& p) { return evaluate(model, p) >= 1.0; }

double evaluate_unguarded(const MetaballModel& model, const Vec3& p) { return sum_terms(model, p); }

Box3 level_set_bounds_conservative(const MetaballModel& model) {
  int positive = 0;
  for (const auto& cp : model.points()) positive += cp.k > 0.0;
  if (positive == 0) fail(Errc::empty_surface, "model has no positive weights, level set is empty");
  Box3 box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& cp : model.points()) {
    if (cp.k <= 0.0) continue;
    const double w = std::sqrt(positive * cp.k);
    box.lo = box.lo.cwiseMin(cp.x - Vec3::Constant(w));
    box.hi = box.hi.cwiseMax(cp.x + Vec3::Constant(w));
  }
  return box;
}

Box3 level_set_bounds(const MetaballModel& model) {
  const Box3 outer = level_set_bounds_conservative(model);
  const double h = outer.extent().maxCoeff() / kProbeCells;
  if (!(h > 0.0)) return outer;
  Index3 n;
  for (int a = 0; a < 3; ++a) n[a] = static_cast<int>(std::ceil(outer.extent()[a] / h)) + 1;
  Box3 found{Vec3::Constant(std::numeric_limits<double>::infinity()),
             Vec3::Constant(-std::numeric_limits<double>::infinity())};
  bool any = false;
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const Vec3 p = outer.lo + h * Vec3(i, j, k);
        if (sum_terms(model, p) >= 1.0) {
          any = true;
          found.lo = found.lo.cwiseMin(p);
          found.hi = found.hi.cwiseMax(p);
        }
      }
  if (!any) return outer;
  const Vec3 pad = Vec3::Constant(2.0 * h);
  return {(found.lo - pad).cwiseMax(outer.lo), (found.hi + pad).cwiseMin(outer.hi)};
}

ScalarGrid sample_field(const MetaballModel& model, int resolution, int margin) {
  require(resolution >= 1, "resolution must be positive");
  const Box3 box = level_set_bounds(model);
  const double h = box.extent().maxCoeff() / resolution;
  // A lattice whose squared spacing underflows cannot resolve the surface.
  if (!(h * h >= std::numeric_limits<double>::min()) || !std::isfinite(h))
    fail(Errc::empty_surface, "level set too small to resolve");
  ScalarGrid grid;
  grid.spacing = h;
  grid.origin = box.lo - Vec3::Constant(margin * h);
  for (int a = 0; a < 3; ++a) {
    grid.dims[a] = static_cast<int>(std::ceil(box.extent()[a] / h)) + 1 + 2 * margin;
  }
  grid.values.resize(static_cast<std::size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2]);
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i)
        grid.values[grid.linear(i, j, k)] = finite_sample(sum_terms(model, grid.position(i, j, k)));
  return grid;
}

TriangleMesh mesh_surface(const MetaballModel& model, int resolution) {
  require(resolution >= 16, "mesh resolution must be >= 16");
  // The probed bounds can clip thin features; widen the margin until the
  // lattice boundary is entirely outside.
  for (int margin = 2;; margin *= 2) {
    const ScalarGrid field = sample_field(model, resolution, margin);
    try {
      return extract_isosurface(field, 1.0);
    } catch (const Error& e) {
      if (e.code() != Errc::open_mesh || margin >= 4 * resolution) throw;
    }
  }
}

VoxelGrid voxelize(const MetaballModel& model, double voxel_size) {
  require(voxel_size > 0.0, "voxel size must be positive");
  if (model.size() == 0) fail(Errc::invalid_argument, "cannot voxelize an empty model");
  const Box3 box = level_set_bounds(model);
  const Vec3 anchor = position_centroid(model);
  Index3 lo, dims;
  for (int a = 0; a < 3; ++a) {
    const double l = std::floor((box.lo[a] - anchor[a]) / voxel_size) - 2;
    const double hgh = std::ceil((box.hi[a] - anchor[a]) / voxel_size) + 2;
    if (!(hgh - l < 4096.0)) fail(Errc::invalid_argument, "voxelization lattice too large");
    lo[a] = static_cast<int>(l);
    dims[a] = static_cast<int>(hgh - l) + 1;
  }
  const Vec3 origin = anchor + voxel_size * Vec3(lo[0], lo[1], lo[2]);
  VoxelGrid grid(dims, voxel_size, origin);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        // Same lattice positions for any translation of the model.
        const Vec3 p = anchor + voxel_size * Vec3(lo[0] + i, lo[1] + j, lo[2] + k);
        if (sum_terms(model, p) >= 1.0) grid.set(i, j, k, true);
      }
  return grid;
}

VoxelGrid voxelize_like(const MetaballModel& model, const VoxelGrid& reference, const Vec3& shift) {
  VoxelGrid grid(reference.dims(), reference.voxel_size(), reference.origin());
  const auto& d = reference.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (sum_terms(model, reference.center(i, j, k) - shift) >= 1.0) grid.set(i, j, k, true);
  return grid;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_mball(const MetaballModel& model) {
  std::string out = "metaball " + std::to_string(model.size()) + "\n";
  for (const auto& cp : model.points()) {
    out += format_double(cp.k) + ' ' + format_double(cp.x[0]) + ' ' + format_double(cp.x[1]) + ' ' +
           format_double(cp.x[2]) + '\n';
  }
  return out;
}

namespace {

double parse_double(const std::string& tok, int line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    fail(Errc::format, "mball: bad number '" + tok + "' on line " + std::to_string(line));
  return v;
}

}  // namespace

MetaballModel parse_mball(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) fail(Errc::format, "mball: empty input");
  std::istringstream header(line);
  std::string tag;
  long long n = 0;
  if (!(header >> tag >> n) || tag != "metaball" || n < 1) fail(Errc::format, "mball: expected 'metaball <n>' header");
  std::vector<ControlPoint> pts;
  pts.reserve(static_cast<std::size_t>(n));
  int lineno = 1;
  while (static_cast<long long>(pts.size()) < n && std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tok[4];
    if (!(ls >> tok[0] >> tok[1] >> tok[2] >> tok[3]))
      fail(Errc::format, "mball: expected 'k x y z' on line " + std::to_string(lineno));
    ControlPoint cp;
    cp.k = parse_double(tok[0], lineno);
    for (int a = 0; a < 3; ++a) cp.x[a] = parse_double(tok[a + 1], lineno);
    if (!std::isfinite(cp.k) || !cp.x.allFinite())
      fail(Errc::format, "mball: non-finite value on line " + std::to_string(lineno));
    pts.push_back(cp);
  }
  if (static_cast<long long>(pts.size()) != n)
    fail(Errc::format, "mball: header declares " + std::to_string(n) + " points, found " + std::to_string(pts.size()));
  return MetaballModel(std::move(pts));
}

void save_mball(const MetaballModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  out << format_mball(model);
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

MetaballModel load_mball(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mball(ss.str());
}

std::string format_mball_set(const std::vector<MetaballModel>& models) {
  std::string out;
  for (const auto& m : models) out += format_mball(m);
  return out;
}

std::vector<MetaballModel> parse_mball_set(const std::string& text) {
  std::vector<MetaballModel> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = text.find("metaball", pos);
    if (start == std::string::npos) {
      if (text.find_first_not_of(" \t\r\n", pos) != std::string::npos) fail(Errc::format, "mball: stray text");
      break;
    }
    if (text.find_first_not_of(" \t\r\n", pos) != start) fail(Errc::format, "mball: stray text before header");
    std::size_t next = text.find("metaball", start + 8);
    if (next == std::string::npos) next = text.size();
    out.push_back(parse_mball(text.substr(start, next - start)));
    pos = next;
  }
  return out;
}

std::vector<MetaballModel> load_mball_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mball_set(ss.str());
}

}  // namespace mbf
