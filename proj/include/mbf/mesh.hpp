#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mbf/geometry.hpp"

namespace mbf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Scalar samples on a regular lattice: value (i,j,k) sits at
/// origin + spacing * (i,j,k). Storage is x-fastest.
struct ScalarGrid {
  Index3 dims{0, 0, 0};
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;
  std::vector<double> values;

  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  Vec3 position(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }
};

/// Triangulates the boundary of {value >= iso} with marching tetrahedra on the
/// six-tetrahedron (Kuhn) split of each cell. Vertices are shared between
/// neighbouring cells, so the result is closed whenever every boundary sample
/// of the lattice lies outside. Normals point towards decreasing value.
///
/// Throws Errc::empty_surface if no lattice edge crosses the iso level and
/// Errc::open_mesh if an inside sample touches the lattice boundary.
TriangleMesh extract_isosurface(const ScalarGrid& field, double iso);

/// Every undirected edge is used by exactly two triangles with opposite
/// orientation.
bool is_closed(const TriangleMesh& mesh);

double triangle_area(const TriangleMesh& mesh, std::size_t t);

void write_obj(const TriangleMesh& mesh, std::ostream& out);
void write_stl_binary(const TriangleMesh& mesh, std::ostream& out);
/// Picks OBJ or binary STL from the file extension.
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace mbf
