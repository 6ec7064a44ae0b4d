#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mbf/metaball.hpp"
#include "mbf/mesh.hpp"
#include "mbf/voxel.hpp"

namespace mbf {

struct PrincipalExtents {
  double shortest = 0.0;
  double intermediate = 0.0;
  double longest = 0.0;
  std::array<Vec3, 3> axes;  // matching shortest, intermediate, longest
};

struct ShapeMetrics {
  double V = 0.0;
  double A = 0.0;
  double CSF = 0.0;
  double Dn = 0.0;
  double Ds = 0.0;
  double Dns = 0.0;
  double phi = 0.0;
  double C = 0.0;
  double Ap = 0.0;
  double Pp = 0.0;
};

struct VolumeArea {
  double volume = 0.0;
  double area = 0.0;
};

struct Projection {
  double area = 0.0;
  double perimeter = 0.0;
};

/// Axis lengths along the eigenvectors of the point covariance (max - min of
/// the projections). When two eigenvalues coincide the in-plane axes are
/// taken from the minimum-area bounding rectangle, which keeps the result
/// rotation invariant.
PrincipalExtents principal_extents(std::span<const Vec3> points);

/// Same, with the axes taken from the second moments of the enclosed solid,
/// which unlike raw vertices do not depend on how the surface was sampled.
/// Extents are still measured over the vertices.
PrincipalExtents principal_extents(const TriangleMesh& mesh);

double corey_shape_factor(const PrincipalExtents& e);

/// Volume by signed tetrahedra, area by triangle sum. Throws Errc::open_mesh
/// unless the mesh is closed.
VolumeArea mesh_volume_area(const TriangleMesh& mesh);

/// Silhouette area and perimeter seen along `direction`. The silhouette is
/// rasterized at pitch R/256 (R: bounding radius about the vertex centroid)
/// with 4x4 coverage samples per pixel; the perimeter is the length of the
/// marching-squares contour of the coverage image at 1/2.
Projection projected_area_perimeter(const TriangleMesh& mesh, const Vec3& direction);

ShapeMetrics mesh_metrics(const TriangleMesh& mesh);
ShapeMetrics shape_metrics(const MetaballModel& model, int resolution);

/// Surface of a binary grid: occupancy smoothed with a Gaussian of
/// `sigma_voxels`, meshed at 1/2.
TriangleMesh grid_surface(const VoxelGrid& grid, double sigma_voxels = 1.0);
ShapeMetrics grid_metrics(const VoxelGrid& grid, double sigma_voxels = 1.0);

constexpr const char* kMetricsCsvHeader = "id,V,A,CSF,Dn,Ds,Dns,phi,C";
std::string metrics_csv_row(const std::string& id, const ShapeMetrics& m);

}  // namespace mbf
