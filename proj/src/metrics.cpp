#include "mbf/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "mbf/error.hpp"

namespace mbf {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kPixelsPerRadius = 256;
constexpr int kSubsamples = 4;
constexpr double kDegenerateEig = 1e-12;
constexpr double kTiedEig = 1e-6;

using Vec2 = Eigen::Vector2d;

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

std::vector<Vec2> convex_hull_2d(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0.0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

double extent_along(std::span<const Vec3> points, const Vec3& axis) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : points) {
    const double t = p.dot(axis);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return hi - lo;
}

// Rotates the pair (a, b) inside their plane to the minimum-area bounding
// rectangle of the projected points (one side is collinear with a hull edge).
void align_tied_axes(std::span<const Vec3> points, Vec3& a, Vec3& b) {
  std::vector<Vec2> proj;
  proj.reserve(points.size());
  for (const auto& p : points) proj.emplace_back(p.dot(a), p.dot(b));
  const auto hull = convex_hull_2d(std::move(proj));
  if (hull.size() < 3) return;
  double best_area = std::numeric_limits<double>::infinity();
  Vec2 best_dir(1.0, 0.0);
  for (std::size_t i = 0; i < hull.size(); ++i) {
    Vec2 e = hull[(i + 1) % hull.size()] - hull[i];
    const double len = e.norm();
    if (len == 0.0) continue;
    e /= len;
    const Vec2 perp(-e[1], e[0]);
    double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1, lo2 = lo1, hi2 = hi1;
    for (const auto& q : hull) {
      lo1 = std::min(lo1, q.dot(e));
      hi1 = std::max(hi1, q.dot(e));
      lo2 = std::min(lo2, q.dot(perp));
      hi2 = std::max(hi2, q.dot(perp));
    }
    const double area = (hi1 - lo1) * (hi2 - lo2);
    if (area < best_area * (1.0 - 1e-12)) {
      best_area = area;
      best_dir = e;
    }
  }
  const Vec3 na = best_dir[0] * a + best_dir[1] * b;
  const Vec3 nb = -best_dir[1] * a + best_dir[0] * b;
  a = na.normalized();
  b = nb.normalized();
}

}  // namespace

namespace {

PrincipalExtents extents_from_covariance(std::span<const Vec3> points, const Eigen::Matrix3d& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) fail(Errc::numeric, "covariance eigen-decomposition failed");
  const Vec3 ev = solver.eigenvalues();  // ascending
  if (!(ev[0] > kDegenerateEig * ev[2])) fail(Errc::degenerate, "point set is coplanar or collinear");

  std::array<Vec3, 3> axes = {solver.eigenvectors().col(0), solver.eigenvectors().col(1),
                              solver.eigenvectors().col(2)};
  const bool tie01 = ev[1] - ev[0] <= kTiedEig * ev[2];
  const bool tie12 = ev[2] - ev[1] <= kTiedEig * ev[2];
  if (tie01 && !tie12) align_tied_axes(points, axes[0], axes[1]);
  if (tie12 && !tie01) align_tied_axes(points, axes[1], axes[2]);

  std::array<std::pair<double, Vec3>, 3> ext;
  for (int i = 0; i < 3; ++i) ext[i] = {extent_along(points, axes[i]), axes[i]};
  std::stable_sort(ext.begin(), ext.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  PrincipalExtents e;
  e.shortest = ext[0].first;
  e.intermediate = ext[1].first;
  e.longest = ext[2].first;
  e.axes = {ext[0].second, ext[1].second, ext[2].second};
  return e;
}

}  // namespace

PrincipalExtents principal_extents(std::span<const Vec3> points) {
  require(points.size() >= 4, "principal extents need at least 4 points");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  return extents_from_covariance(points, cov);
}

PrincipalExtents principal_extents(const TriangleMesh& mesh) {
  if (!is_closed(mesh)) fail(Errc::open_mesh, "mesh is not closed; volume is unreliable");
  require(mesh.vertices.size() >= 4, "principal extents need at least 4 points");
  Vec3 ref = Vec3::Zero();
  for (const auto& p : mesh.vertices) ref += p;
  ref /= static_cast<double>(mesh.vertices.size());
  // Tetrahedra (ref, a, b, c): volume det/6, first moment v (a+b+c)/4 and
  // second moment v/20 (aa' + bb' + cc' + ss') with s = a+b+c.
  double volume = 0.0;
  Vec3 first = Vec3::Zero();
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - ref, b = mesh.vertices[t[1]] - ref, c = mesh.vertices[t[2]] - ref;
    const double v = a.dot(b.cross(c)) / 6.0;
    const Vec3 sum = a + b + c;
    volume += v;
    first += v * sum / 4.0;
    second += v / 20.0 * (a * a.transpose() + b * b.transpose() + c * c.transpose() + sum * sum.transpose());
  }
  if (!(volume > 0.0)) fail(Errc::degenerate, "mesh encloses no volume");
  const Vec3 mean = first / volume;
  const Eigen::Matrix3d cov = second / volume - mean * mean.transpose();
  return extents_from_covariance(mesh.vertices, cov);
}

double corey_shape_factor(const PrincipalExtents& e) {
  return e.shortest / std::sqrt(e.intermediate * e.longest);
}

VolumeArea mesh_volume_area(const TriangleMesh& mesh) {
  if (!is_closed(mesh)) fail(Errc::open_mesh, "mesh is not closed; volume is unreliable");
  double six_v = 0.0, area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    six_v += a.dot(b.cross(c));
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return {std::abs(six_v) / 6.0, area};
}

Projection projected_area_perimeter(const TriangleMesh& mesh, const Vec3& direction) {
  require(mesh.vertices.size() >= 3 && !mesh.triangles.empty(), "projection needs a non-empty mesh");
  require(std::abs(direction.norm() - 1.0) < 1e-6, "projection direction must be a unit vector");

  // +d and -d see the same silhouette; canonicalize so both rasterize alike.
  Vec3 dir = direction;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] != 0.0) {
      if (dir[a] < 0.0) dir = -dir;
      break;
    }
  }
  int least = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(dir[a]) < std::abs(dir[least])) least = a;
  const Vec3 u = dir.cross(Vec3::Unit(least)).normalized();
  const Vec3 v = dir.cross(u);

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : mesh.vertices) centroid += p;
  centroid /= static_cast<double>(mesh.vertices.size());
  double radius = 0.0;
  for (const auto& p : mesh.vertices) radius = std::max(radius, (p - centroid).norm());
  require(radius > 0.0, "mesh has zero extent");
  const double pitch = radius / kPixelsPerRadius;
  const double sub = pitch / kSubsamples;

  std::vector<Vec2> q(mesh.vertices.size());
  Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const Vec3 d = mesh.vertices[i] - centroid;
    q[i] = Vec2(d.dot(u), d.dot(v));
    lo = lo.cwiseMin(q[i]);
  }
  // Two empty pixels on each side keep every contour closed.
  const Vec2 org = lo - Vec2::Constant(2.0 * pitch);
  int w = 0, h = 0;
  for (const auto& p : q) {
    w = std::max(w, static_cast<int>(std::ceil((p[0] - org[0]) / pitch)) + 3);
    h = std::max(h, static_cast<int>(std::ceil((p[1] - org[1]) / pitch)) + 3);
  }
  const int sw = w * kSubsamples, sh = h * kSubsamples;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(sw) * sh, 0);

  const double tol = 1e-12 * radius * radius;
  for (const auto& t : mesh.triangles) {
    Vec2 a = q[t[0]], b = q[t[1]], c = q[t[2]];
    // For a closed, consistently oriented mesh the triangles facing one way
    // already cover the whole silhouette.
    if (!(cross2(a, b, c) > 0.0)) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor((std::min({a[0], b[0], c[0]}) - org[0]) / sub)));
    const int x1 = std::min(sw - 1, static_cast<int>(std::ceil((std::max({a[0], b[0], c[0]}) - org[0]) / sub)));
    const int y0 = std::max(0, static_cast<int>(std::floor((std::min({a[1], b[1], c[1]}) - org[1]) / sub)));
    const int y1 = std::min(sh - 1, static_cast<int>(std::ceil((std::max({a[1], b[1], c[1]}) - org[1]) / sub)));
    for (int y = y0; y <= y1; ++y) {
      const double py = org[1] + (y + 0.5) * sub;
      for (int x = x0; x <= x1; ++x) {
        const double px = org[0] + (x + 0.5) * sub;
        const Vec2 p(px, py);
        if (cross2(a, b, p) >= -tol && cross2(b, c, p) >= -tol && cross2(c, a, p) >= -tol)
          mask[static_cast<std::size_t>(y) * sw + x] = 1;
      }
    }
  }

  std::vector<double> cov(static_cast<std::size_t>(w) * h, 0.0);
  double covered = 0.0;
  const double inv_samples = 1.0 / (kSubsamples * kSubsamples);
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x)
      if (mask[static_cast<std::size_t>(y) * sw + x]) {
        cov[static_cast<std::size_t>(y / kSubsamples) * w + x / kSubsamples] += inv_samples;
        covered += inv_samples;
      }
  if (covered == 0.0) fail(Errc::empty_surface, "empty silhouette");

  // Marching squares on pixel centers, iso 1/2, linear interpolation.
  auto val = [&](int x, int y) { return cov[static_cast<std::size_t>(y) * w + x]; };
  auto lerp = [](double a, double b) { return (0.5 - a) / (b - a); };
  double perimeter = 0.0;
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const double v0 = val(x, y), v1 = val(x + 1, y), v2 = val(x + 1, y + 1), v3 = val(x, y + 1);
      const int code = (v0 >= 0.5) | ((v1 >= 0.5) << 1) | ((v2 >= 0.5) << 2) | ((v3 >= 0.5) << 3);
      if (code == 0 || code == 15) continue;
      // Crossing points on the four cell edges (cell-local units).
      Vec2 e[4];
      bool has[4] = {false, false, false, false};
      if ((v0 >= 0.5) != (v1 >= 0.5)) e[0] = Vec2(lerp(v0, v1), 0.0), has[0] = true;
      if ((v1 >= 0.5) != (v2 >= 0.5)) e[1] = Vec2(1.0, lerp(v1, v2)), has[1] = true;
      if ((v3 >= 0.5) != (v2 >= 0.5)) e[2] = Vec2(lerp(v3, v2), 1.0), has[2] = true;
      if ((v0 >= 0.5) != (v3 >= 0.5)) e[3] = Vec2(0.0, lerp(v0, v3)), has[3] = true;
      if (code == 5 || code == 10) {
        // Saddle: connect according to the cell-center average.
        const bool center_in = 0.25 * (v0 + v1 + v2 + v3) >= 0.5;
        const bool pair01 = (code == 5) == center_in;
        if (pair01) {
          perimeter += (e[0] - e[1]).norm() + (e[2] - e[3]).norm();
        } else {
          perimeter += (e[0] - e[3]).norm() + (e[1] - e[2]).norm();
        }
        continue;
      }
      Vec2 ends[2];
      int ne = 0;
      for (int s = 0; s < 4; ++s)
        if (has[s]) ends[ne++] = e[s];
      perimeter += (ends[0] - ends[1]).norm();
    }

  return {covered * pitch * pitch, perimeter * pitch};
}

ShapeMetrics mesh_metrics(const TriangleMesh& mesh) {
  const VolumeArea va = mesh_volume_area(mesh);
  const PrincipalExtents ext = principal_extents(mesh);
  ShapeMetrics m;
  m.V = va.volume;
  m.A = va.area;
  m.CSF = corey_shape_factor(ext);
  m.Dn = std::cbrt(6.0 * m.V / kPi);
  m.Ap = -1.0;
  for (const auto& axis : ext.axes) {
    const Projection p = projected_area_perimeter(mesh, axis);
    if (p.area > m.Ap) {
      m.Ap = p.area;
      m.Pp = p.perimeter;
    }
  }
  m.Ds = std::sqrt(4.0 * m.Ap / kPi);
  m.Dns = m.Dn / m.Ds;
  const double a_ve = std::cbrt(kPi) * std::pow(6.0 * m.V, 2.0 / 3.0);
  m.phi = a_ve / m.A;
  m.C = kPi * m.Ds / m.Pp;
  return m;
}

ShapeMetrics shape_metrics(const MetaballModel& model, int resolution) {
  return mesh_metrics(mesh_surface(model, resolution));
}

TriangleMesh grid_surface(const VoxelGrid& grid, double sigma_voxels) {
  require(sigma_voxels >= 0.0, "smoothing sigma must be non-negative");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_voxels));
  const int pad = radius + 2;
  const auto& d = grid.dims();
  ScalarGrid field;
  field.spacing = grid.voxel_size();
  field.origin = grid.origin() - Vec3::Constant(pad * grid.voxel_size());
  for (int a = 0; a < 3; ++a) field.dims[a] = d[a] + 2 * pad;
  field.values.assign(static_cast<std::size_t>(field.dims[0]) * field.dims[1] * field.dims[2], 0.0);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (grid.at(i, j, k)) field.values[field.linear(i + pad, j + pad, k + pad)] = 1.0;

  if (radius > 0) {
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
      kernel[t + radius] = std::exp(-0.5 * t * t / (sigma_voxels * sigma_voxels));
      sum += kernel[t + radius];
    }
    for (auto& c : kernel) c /= sum;
    const auto& fd = field.dims;
    const std::size_t stride[3] = {1, static_cast<std::size_t>(fd[0]), static_cast<std::size_t>(fd[0]) * fd[1]};
    std::vector<double> line;
    for (int axis = 0; axis < 3; ++axis) {
      const int n = fd[axis];
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      line.resize(n);
      for (int p = 0; p < fd[a1]; ++p)
        for (int r = 0; r < fd[a2]; ++r) {
          const std::size_t base = p * stride[a1] + r * stride[a2];
          for (int q = 0; q < n; ++q) line[q] = field.values[base + q * stride[axis]];
          for (int q = 0; q < n; ++q) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t) {
              const int s = q + t;
              if (s >= 0 && s < n) acc += kernel[t + radius] * line[s];
            }
            field.values[base + q * stride[axis]] = acc;
          }
        }
    }
  }
  return extract_isosurface(field, 0.5);
}

ShapeMetrics grid_metrics(const VoxelGrid& grid, double sigma_voxels) {
  return mesh_metrics(grid_surface(grid, sigma_voxels));
}

std::string metrics_csv_row(const std::string& id, const ShapeMetrics& m) {
  std::ostringstream os;
  os << id << ',' << format_double(m.V) << ',' << format_double(m.A) << ',' << format_double(m.CSF) << ','
     << format_double(m.Dn) << ',' << format_double(m.Ds) << ',' << format_double(m.Dns) << ','
     << format_double(m.phi) << ',' << format_double(m.C);
  return os.str();
}

}  // namespace mbf
