#include "mbf/fixtures.hpp"

#include <cmath>
#include <functional>
#include <numbers>

#include "mbf/error.hpp"
#include "mbf/rng.hpp"

namespace mbf {

namespace {

struct Shape {
  Vec3 half_extent;
  std::function<bool(const Vec3&)> inside;  // p relative to the shape center
  std::vector<Vec3> centers;                // component centers, relative
};

Shape describe(const FixtureParams& p) {
  const double s = p.scale;
  Shape shape;
  switch (p.kind) {
    case FixtureKind::ball:
      shape.half_extent = Vec3::Constant(s);
      shape.inside = [s](const Vec3& q) { return q.squaredNorm() <= s * s; };
      shape.centers = {Vec3::Zero()};
      break;
    case FixtureKind::two_balls: {
      const double r1 = s, r2 = 0.6 * s, gap = p.gap * s;
      const double sep = r1 + r2 + gap;
      const Vec3 c1((r1 - r2 - sep) / 2.0, 0.0, 0.0);
      const Vec3 c2 = c1 + Vec3(sep, 0.0, 0.0);
      shape.half_extent = Vec3(r1 + r2 + gap / 2.0, r1, r1);
      shape.inside = [=](const Vec3& q) {
        return (q - c1).squaredNorm() <= r1 * r1 || (q - c2).squaredNorm() <= r2 * r2;
      };
      shape.centers = {c1, c2};
      break;
    }
    case FixtureKind::ellipsoid: {
      const Vec3 ax = p.semi_axes.value_or(Vec3(s, 0.5 * s, 0.5 * s));
      require((ax.array() > 0.0).all(), "ellipsoid semi-axes must be positive");
      shape.half_extent = ax;
      shape.inside = [ax](const Vec3& q) { return q.cwiseQuotient(ax).squaredNorm() <= 1.0; };
      shape.centers = {Vec3::Zero()};
      break;
    }
    case FixtureKind::angular: {
      // Thirty facets with normals on a golden-angle spiral and uneven
      // offsets, then stretched: a lopsided, elongated polytope.
      const Vec3 stretch(1.0, 0.85, 0.7);
      const int facets = 30;
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      std::vector<std::pair<Vec3, double>> planes;
      for (int f = 0; f < facets; ++f) {
        const double z = 1.0 - (2.0 * f + 1.0) / facets;
        const double rho = std::sqrt(1.0 - z * z);
        const Vec3 dir(rho * std::cos(golden * f), rho * std::sin(golden * f), z);
        const double offset = 0.9 * (1.0 + 0.06 * std::sin(2.3 * (f + 1)));
        // n.q <= d in the unstretched frame becomes (n / stretch).q <= d
        planes.push_back({dir.cwiseQuotient(stretch), offset * s});
      }
      shape.half_extent = stretch * s;
      shape.inside = [planes](const Vec3& q) {
        for (const auto& [n, d] : planes)
          if (n.dot(q) > d) return false;
        return true;
      };
      shape.centers = {Vec3::Zero()};
      break;
    }
    case FixtureKind::concave: {
      const Vec3 bite(1.1 * s, 0.25 * s, 0.0);
      const double rb = 0.5 * s;
      shape.half_extent = Vec3::Constant(s);
      shape.inside = [=](const Vec3& q) { return q.squaredNorm() <= s * s && (q - bite).squaredNorm() > rb * rb; };
      shape.centers = {Vec3::Zero()};
      break;
    }
  }
  return shape;
}

}  // namespace

FixtureKind parse_fixture_kind(const std::string& name) {
  if (name == "ball") return FixtureKind::ball;
  if (name == "two_balls") return FixtureKind::two_balls;
  if (name == "ellipsoid") return FixtureKind::ellipsoid;
  if (name == "angular") return FixtureKind::angular;
  if (name == "concave") return FixtureKind::concave;
  fail(Errc::invalid_argument, "unknown fixture kind '" + name + "'");
}

std::string to_string(FixtureKind kind) {
  switch (kind) {
    case FixtureKind::ball: return "ball";
    case FixtureKind::two_balls: return "two_balls";
    case FixtureKind::ellipsoid: return "ellipsoid";
    case FixtureKind::angular: return "angular";
    case FixtureKind::concave: return "concave";
  }
  return "unknown";
}

namespace {

Index3 fixture_dims(const FixtureParams& p, const Shape& shape) {
  if (p.dims > 0) return {p.dims, p.dims, p.dims};
  Index3 d;
  for (int a = 0; a < 3; ++a) d[a] = 2 * static_cast<int>(std::ceil(shape.half_extent[a])) + 1 + 2 * p.margin;
  return d;
}

Vec3 grid_center(const Index3& d) { return Vec3(d[0] - 1, d[1] - 1, d[2] - 1) / 2.0; }

}  // namespace

VoxelGrid make_fixture(const FixtureParams& params) {
  require(params.scale > 0.0, "fixture scale must be positive");
  require(params.margin >= 0, "fixture margin must be non-negative");
  const Shape shape = describe(params);
  const Index3 d = fixture_dims(params, shape);
  const Vec3 c = grid_center(d);
  VoxelGrid grid(d, params.voxel_size);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (shape.inside(Vec3(i, j, k) - c)) grid.set(i, j, k, true);
  return grid;
}

std::vector<Vec3> fixture_centers(const FixtureParams& params) {
  const Shape shape = describe(params);
  const Vec3 c = grid_center(fixture_dims(params, shape));
  std::vector<Vec3> out;
  for (const auto& rel : shape.centers) out.push_back(c + rel);
  return out;
}

std::vector<MetaballModel> make_blob_dataset(std::size_t count, int balls, std::uint64_t seed) {
  require(balls >= 1, "blob dataset needs at least one ball per model");
  Rng rng = make_stream(seed, "dataset");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MetaballModel> out;
  out.reserve(count);
  for (std::size_t m = 0; m < count; ++m) {
    // Each particle: a core blob stretched along a random-ish axis with
    // per-particle elongation, plus jittered satellites.
    const double elongation = 1.0 + 1.2 * unit(rng);
    std::vector<ControlPoint> pts;
    for (int b = 0; b < balls; ++b) {
      const double t = balls == 1 ? 0.0 : -1.0 + 2.0 * b / (balls - 1);
      Vec3 x(t * 3.0 * elongation, 0.0, 0.0);
      x += Vec3(normal(rng), normal(rng), normal(rng)) * 1.5;
      const double r = 3.0 + 2.0 * unit(rng);
      pts.push_back({r * r, x});
    }
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p.x;
    mean /= balls;
    for (auto& p : pts) p.x -= mean;
    out.emplace_back(std::move(pts));
  }
  return out;
}

}  // namespace mbf
