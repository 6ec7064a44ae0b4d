#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mbf/metaball.hpp"
#include "mbf/voxel.hpp"

namespace mbf {

struct InscribedSphere {
  double r = 0.0;                 // physical units
  Vec3 c = Vec3::Zero();          // physical, hull-centered frame
  Index3 voxel{0, 0, 0};          // maximizing voxel
  double r_voxels = 0.0;          // distance-transform value at `voxel`
};

struct ClusteringResult {
  std::vector<InscribedSphere> spheres;
  bool exhausted = false;  // grid ran out of voxels before n spheres
};

/// Repeated maximum-inscribed-sphere extraction: distance transform, take the
/// maximum (lowest linear index on ties), clear the sphere, repeat.
ClusteringResult sphere_clustering(const VoxelGrid& grid, int n);

struct GSConfig {
  int generations = 2000;
  double learning_rate = 1e-3;
  double adam_fraction = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Lower clamp for k after every step. Unset means 1e-8 * R^2 with R the
  /// hull bounding radius.
  std::optional<double> k_floor;
  std::uint64_t seed = 0;
};

struct FitReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // loss after each generation
  MetaballModel model;               // best model seen, hull-centered frame
  bool diverged = false;
  bool exhausted = false;            // sphere clustering found fewer than n spheres
  Vec3 frame_offset = Vec3::Zero();  // hull centroid in the grid frame
  int n = 0;
  std::uint64_t seed = 0;
};

struct LossGradient {
  std::vector<double> dk;
  std::vector<Vec3> dx;
};

/// Piecewise hull loss: per point (f-1)^2 above 2, (f-1) on [1,2] and
/// (f-1)^2 + 1/f - 1 below 1. Points with f <= 0 make the loss infinite.
double metaball_loss(const MetaballModel& model, const PointHull& hull);

/// Branch value for a single function value; exposed for continuity checks.
double loss_branch(double f);
/// d(loss_branch)/df, middle-branch slope at f = 1 and f = 2.
double loss_branch_slope(double f);

/// Exact gradient of metaball_loss with respect to every k_i and x_i.
LossGradient loss_gradient(const MetaballModel& model, const PointHull& hull);

/// Full-batch refinement: Adam for the first ceil(adam_fraction * E)
/// generations, plain gradient descent afterwards. Returns the best model.
FitReport gradient_search(const MetaballModel& initial, const PointHull& hull, const GSConfig& config);

/// Initial model from inscribed spheres: k = r^2, x = c.
MetaballModel model_from_spheres(const std::vector<InscribedSphere>& spheres);

/// Point hull -> sphere clustering -> gradient search.
FitReport metaball_image(const VoxelGrid& grid, int n, const GSConfig& config);

/// Voxel IoU between the fitted avatar and the grid it came from.
double fit_iou(const FitReport& report, const VoxelGrid& grid);

}  // namespace mbf
