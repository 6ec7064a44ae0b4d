#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mbf/geometry.hpp"
#include "mbf/mesh.hpp"
#include "mbf/voxel.hpp"

namespace mbf {

/// One term k / |p - x|^2 of the implicit function. In isolation it bounds a
/// sphere of radius sqrt(k) around x.
struct ControlPoint {
  double k = 0.0;
  Vec3 x = Vec3::Zero();

  friend bool operator==(const ControlPoint&, const ControlPoint&) = default;
};

/// Sum of inverse-square kernels; the particle surface is the level set f = 1.
class MetaballModel {
 public:
  MetaballModel() = default;
  explicit MetaballModel(std::vector<ControlPoint> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<ControlPoint>& points() const { return points_; }
  const ControlPoint& operator[](std::size_t i) const { return points_[i]; }

  /// Radius of the smallest ball about the position centroid that holds
  /// every control sphere of radius sqrt(|k|).
  double scale() const;

  MetaballModel translated(const Vec3& t) const;
  /// x -> s x, k -> s^2 k; the level set scales by s.
  MetaballModel scaled(double s) const;

  friend bool operator==(const MetaballModel&, const MetaballModel&) = default;

 private:
  std::vector<ControlPoint> points_;
};

/// f(p) = sum_i k_i / |p - x_i|^2. Throws Errc::singularity when p is within
/// 1e-12 * scale of a control point.
double evaluate(const MetaballModel& model, const Vec3& p);

/// f(p) >= 1; the surface itself counts as inside.
bool contains(const MetaballModel& model, const Vec3& p);

/// Like evaluate, but a point on top of a control point yields +/-infinity
/// instead of throwing. Used by samplers.
double evaluate_unguarded(const MetaballModel& model, const Vec3& p);

/// Conservative box around the level set: for each positive-k point a cube of
/// half-width sqrt(m * k) where m is the number of positive points. Outside
/// all cubes every term is below 1/m.
Box3 level_set_bounds_conservative(const MetaballModel& model);

/// Conservative box shrunk to the sampled extent of the level set (plus a
/// two-cell margin of the probing lattice).
Box3 level_set_bounds(const MetaballModel& model);

/// Samples f over a lattice that covers the level set with at least `margin`
/// cells on each side; `resolution` cells span the longest box edge.
ScalarGrid sample_field(const MetaballModel& model, int resolution, int margin = 2);

/// Closed, outward-oriented triangulation of f = 1.
TriangleMesh mesh_surface(const MetaballModel& model, int resolution);

/// Occupancy of the model at `voxel_size`. The lattice is anchored to the
/// control-point centroid, so translating the model translates the result.
VoxelGrid voxelize(const MetaballModel& model, double voxel_size);

/// Occupancy sampled at the voxel centers of `reference` shifted by -`shift`
/// (i.e. reference voxel c is tested at c - shift in model coordinates).
VoxelGrid voxelize_like(const MetaballModel& model, const VoxelGrid& reference, const Vec3& shift);

/// Text format: "metaball <n>" then n lines "k x y z" in shortest
/// round-trip decimal.
std::string format_mball(const MetaballModel& model);
MetaballModel parse_mball(const std::string& text);
void save_mball(const MetaballModel& model, const std::filesystem::path& path);
MetaballModel load_mball(const std::filesystem::path& path);

/// Several models back to back in one text, each with its own header.
std::string format_mball_set(const std::vector<MetaballModel>& models);
std::vector<MetaballModel> parse_mball_set(const std::string& text);
std::vector<MetaballModel> load_mball_set(const std::filesystem::path& path);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace mbf
