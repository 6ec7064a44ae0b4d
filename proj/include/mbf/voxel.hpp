#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbf/geometry.hpp"

namespace mbf {

/// Binary occupancy grid with uniform physical voxel size. Voxel (0,0,0) has
/// its center at `origin`; storage is x-fastest.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(Index3 dims, double voxel_size, Vec3 origin = Vec3::Zero());

  const Index3& dims() const { return dims_; }
  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  std::size_t size() const { return occupancy_.size(); }

  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  Index3 unravel(std::size_t idx) const;
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }

  std::uint8_t at(int i, int j, int k) const { return occupancy_[linear(i, j, k)]; }
  void set(int i, int j, int k, bool occupied) { occupancy_[linear(i, j, k)] = occupied ? 1 : 0; }

  std::span<const std::uint8_t> occupancy() const { return occupancy_; }
  std::span<std::uint8_t> occupancy() { return occupancy_; }

  /// Physical position of a voxel center.
  Vec3 center(int i, int j, int k) const {
    return origin_ + voxel_size_ * Vec3(i, j, k);
  }

  std::size_t occupied_count() const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  Index3 dims_{0, 0, 0};
  double voxel_size_ = 1.0;
  Vec3 origin_ = Vec3::Zero();
  std::vector<std::uint8_t> occupancy_;
};

/// Centered surface point cloud. `centroid` is the translation that was
/// removed, expressed in the grid's physical frame.
struct PointHull {
  std::vector<Vec3> points;
  Vec3 centroid = Vec3::Zero();

  std::size_t size() const { return points.size(); }
  double bounding_radius() const;
};

/// Euclidean distance to the nearest background voxel center, in voxel units.
struct DistanceField {
  Index3 dims{0, 0, 0};
  std::vector<double> values;

  double at(int i, int j, int k) const {
    return values[static_cast<std::size_t>(i) +
                  static_cast<std::size_t>(dims[0]) *
                      (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k)];
  }
};

enum class GridFormat { automatic, binary, sparse_text };

VoxelGrid load_voxel_grid(const std::filesystem::path& path, GridFormat format = GridFormat::automatic);
void save_voxel_grid(const VoxelGrid& grid, const std::filesystem::path& path,
                     GridFormat format = GridFormat::binary);

// In-memory codecs behind the file functions.
std::vector<std::uint8_t> encode_vgrid(const VoxelGrid& grid);
VoxelGrid decode_vgrid(std::span<const std::uint8_t> bytes);
std::string encode_sparse_text(const VoxelGrid& grid);
VoxelGrid decode_sparse_text(const std::string& text);

/// True for occupied voxels with at least one 6-neighbour that is empty or
/// outside the grid.
bool is_surface_voxel(const VoxelGrid& grid, int i, int j, int k);

/// Mean physical position of the surface voxel centers.
Vec3 surface_centroid(const VoxelGrid& grid);

/// Surface voxel centers translated so that their centroid is the origin.
/// Throws when fewer than four voxels are occupied.
PointHull extract_point_hull(const VoxelGrid& grid);

/// Exact Euclidean distance transform. Out-of-bounds positions count as
/// background, so every occupied voxel gets a finite value.
DistanceField distance_transform(const VoxelGrid& grid);

/// Reference transform by exhaustive nearest-background search. O(N^2); meant
/// for verification on small grids.
DistanceField distance_transform_brute_force(const VoxelGrid& grid);

/// Clears every voxel whose center lies within `radius` (inclusive) of
/// `center`, both given in voxel index coordinates.
VoxelGrid carve_sphere(const VoxelGrid& grid, const Vec3& center, double radius);

/// Intersection over union of two grids with identical dims.
double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

}  // namespace mbf
