#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mbf/metaball.hpp"
#include "mbf/voxel.hpp"

namespace mbf {

/// Synthetic stand-ins for scanned particle classes.
enum class FixtureKind { ball, two_balls, ellipsoid, angular, concave };

FixtureKind parse_fixture_kind(const std::string& name);
std::string to_string(FixtureKind kind);

/// All lengths in voxels. `scale` is the characteristic radius; each kind
/// derives its geometry from it:
///   ball       radius = scale
///   two_balls  radii scale and 0.6 scale, surface gap `gap` * scale along x
///   ellipsoid  semi-axes (scale, scale/2, scale/2) unless `semi_axes` is set
///   angular    30-facet convex polytope stretched by (1, 0.85, 0.7)
///   concave    ball of radius scale minus a ball of radius scale/2 centered
///              just outside its surface
struct FixtureParams {
  FixtureKind kind = FixtureKind::ball;
  double scale = 10.0;
  double voxel_size = 1.0;
  int margin = 3;
  /// Explicit cubic grid edge; 0 sizes the grid to the shape plus `margin`.
  int dims = 0;
  std::optional<Vec3> semi_axes;
  /// two_balls: surface gap between the balls in units of scale; negative
  /// values overlap them.
  double gap = -0.6;
};

/// A voxel is occupied when its center lies inside the analytic shape.
/// Shapes are centered in the grid.
VoxelGrid make_fixture(const FixtureParams& params);

/// Shape centers (voxel index coordinates) of the fixture's components; for
/// two_balls these are the two ball centers.
std::vector<Vec3> fixture_centers(const FixtureParams& params);

/// Random five-ball style dataset used to exercise the generator. Each model
/// has `balls` control points around the origin.
std::vector<MetaballModel> make_blob_dataset(std::size_t count, int balls, std::uint64_t seed);

}  // namespace mbf
