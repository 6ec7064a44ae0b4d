#include "mbf/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbf/error.hpp"

namespace mbf {

ClusteringResult sphere_clustering(const VoxelGrid& grid, int n) {
  require(n >= 1, "sphere clustering needs n >= 1");
  require(grid.occupied_count() >= static_cast<std::size_t>(n), "grid has fewer occupied voxels than n");
  const Vec3 centroid = surface_centroid(grid);

  ClusteringResult result;
  VoxelGrid work = grid;
  for (int iter = 0; iter < n; ++iter) {
    const DistanceField field = distance_transform(work);
    std::size_t best = 0;
    double best_value = 0.0;
    for (std::size_t idx = 0; idx < field.values.size(); ++idx) {
      if (field.values[idx] > best_value) {
        best_value = field.values[idx];
        best = idx;
      }
    }
    if (best_value <= 0.0) {
      result.exhausted = true;
      break;
    }
    const Index3 v = work.unravel(best);
    InscribedSphere s;
    s.voxel = v;
    s.r_voxels = best_value;
    s.r = best_value * grid.voxel_size();
    s.c = grid.center(v[0], v[1], v[2]) - centroid;
    result.spheres.push_back(s);
    work = carve_sphere(work, Vec3(v[0], v[1], v[2]), best_value);
  }
  return result;
}

double loss_branch(double f) {
  if (f > 2.0) return (f - 1.0) * (f - 1.0);
  if (f >= 1.0) return f - 1.0;
  if (f > 0.0) return (f - 1.0) * (f - 1.0) + 1.0 / f - 1.0;
  return std::numeric_limits<double>::infinity();
}

double loss_branch_slope(double f) {
  if (f > 2.0) return 2.0 * (f - 1.0);
  if (f >= 1.0) return 1.0;
  if (f > 0.0) return 2.0 * (f - 1.0) - 1.0 / (f * f);
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

// Structure-of-arrays view of a model and hull for the inner fitting loop.
struct Problem {
  std::vector<double> hx, hy, hz;
};

Problem make_problem(const PointHull& hull, double scale) {
  Problem p;
  const std::size_t m = hull.size();
  p.hx.resize(m);
  p.hy.resize(m);
  p.hz.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    p.hx[j] = hull.points[j][0] * scale;
    p.hy[j] = hull.points[j][1] * scale;
    p.hz[j] = hull.points[j][2] * scale;
  }
  return p;
}

// Parameters packed as [k_0, x_0, y_0, z_0, k_1, ...].
std::vector<double> pack(const MetaballModel& model, double scale) {
  std::vector<double> theta(4 * model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    theta[4 * i] = model[i].k * scale * scale;
    for (int a = 0; a < 3; ++a) theta[4 * i + 1 + a] = model[i].x[a] * scale;
  }
  return theta;
}

MetaballModel unpack(const std::vector<double>& theta, double scale) {
  std::vector<ControlPoint> pts(theta.size() / 4);
  const double inv = 1.0 / scale;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i].k = theta[4 * i] * inv * inv;
    pts[i].x = Vec3(theta[4 * i + 1], theta[4 * i + 2], theta[4 * i + 3]) * inv;
  }
  return MetaballModel(std::move(pts));
}

// Loss and (optionally) its gradient with respect to packed parameters.
double evaluate_problem(const Problem& prob, const std::vector<double>& theta, std::vector<double>* grad,
                        std::vector<double>& inv_r2, double guard2) {
  const std::size_t n = theta.size() / 4;
  const std::size_t m = prob.hx.size();
  if (grad) grad->assign(theta.size(), 0.0);
  double loss = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double px = prob.hx[j], py = prob.hy[j], pz = prob.hz[j];
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = px - theta[4 * i + 1], dy = py - theta[4 * i + 2], dz = pz - theta[4 * i + 3];
      const double r2 = dx * dx + dy * dy + dz * dz;
      if (r2 < guard2 || r2 == 0.0) fail(Errc::singularity, "hull point coincides with a control point");
      inv_r2[i] = 1.0 / r2;
      f += theta[4 * i] * inv_r2[i];
    }
    loss += loss_branch(f);
    if (!grad) continue;
    const double slope = loss_branch_slope(f);
    auto& g = *grad;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = inv_r2[i];
      g[4 * i] += slope * w;
      // d/dx_i of k / |p - x_i|^2 = 2 k (p - x_i) / |p - x_i|^4
      const double c = 2.0 * slope * theta[4 * i] * w * w;
      g[4 * i + 1] += c * (px - theta[4 * i + 1]);
      g[4 * i + 2] += c * (py - theta[4 * i + 2]);
      g[4 * i + 3] += c * (pz - theta[4 * i + 3]);
    }
  }
  return loss;
}

double guard_squared(const MetaballModel& model, double scale) {
  const double g = 1e-12 * model.scale() * scale;
  return g * g;
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double metaball_loss(const MetaballModel& model, const PointHull& hull) {
  const Problem prob = make_problem(hull, 1.0);
  std::vector<double> inv_r2(model.size());
  return evaluate_problem(prob, pack(model, 1.0), nullptr, inv_r2, guard_squared(model, 1.0));
}

LossGradient loss_gradient(const MetaballModel& model, const PointHull& hull) {
  const Problem prob = make_problem(hull, 1.0);
  std::vector<double> inv_r2(model.size()), grad;
  evaluate_problem(prob, pack(model, 1.0), &grad, inv_r2, guard_squared(model, 1.0));
  LossGradient out;
  out.dk.resize(model.size());
  out.dx.resize(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    out.dk[i] = grad[4 * i];
    out.dx[i] = Vec3(grad[4 * i + 1], grad[4 * i + 2], grad[4 * i + 3]);
  }
  return out;
}

FitReport gradient_search(const MetaballModel& initial, const PointHull& hull, const GSConfig& config) {
  require(config.generations >= 1, "gradient search needs generations >= 1");
  require(config.learning_rate > 0.0, "learning rate must be positive");
  require(config.adam_fraction >= 0.0 && config.adam_fraction <= 1.0, "adam_fraction must lie in [0,1]");
  require(hull.size() >= 4, "gradient search needs at least 4 hull points");
  require(initial.size() >= 1, "gradient search needs a non-empty initial model");

  // Work in a frame where the hull fits the unit ball. f, and therefore the
  // loss, is unchanged by x -> s x, k -> s^2 k.
  const double radius = hull.bounding_radius();
  require(radius > 0.0, "hull has zero extent");
  const double scale = 1.0 / radius;
  const double k_floor = (config.k_floor ? *config.k_floor * scale * scale : 1e-8);

  const Problem prob = make_problem(hull, scale);
  const double inv_m = 1.0 / static_cast<double>(hull.size());
  std::vector<double> theta = pack(initial, scale);
  std::vector<double> grad, inv_r2(initial.size());
  std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0);
  const double guard2 = guard_squared(initial, scale);

  const int adam_steps =
      static_cast<int>(std::ceil(config.adam_fraction * config.generations - 1e-9));

  FitReport report;
  report.seed = config.seed;
  report.n = static_cast<int>(initial.size());
  report.loss_history.reserve(config.generations);

  std::vector<double> best = theta;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int gen = 0;; ++gen) {
    double loss;
    try {
      loss = evaluate_problem(prob, theta, gen < config.generations ? &grad : nullptr, inv_r2, guard2);
    } catch (const Error& e) {
      if (e.code() != Errc::singularity || gen == 0) throw;
      loss = std::numeric_limits<double>::infinity();
    }
    const bool finite = std::isfinite(loss) && (gen == config.generations || all_finite(grad));
    if (gen == 0) {
      if (!std::isfinite(loss)) fail(Errc::numeric, "initial model has non-finite loss");
      report.initial_loss = loss;
    } else {
      report.loss_history.push_back(loss);
    }
    if (!finite) {
      report.diverged = true;
      break;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = theta;
    }
    if (gen == config.generations) break;

    const double lr = config.learning_rate;
    if (gen < adam_steps) {
      const double t = gen + 1;
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      for (std::size_t p = 0; p < theta.size(); ++p) {
        const double g = grad[p] * inv_m;
        m1[p] = config.beta1 * m1[p] + (1.0 - config.beta1) * g;
        m2[p] = config.beta2 * m2[p] + (1.0 - config.beta2) * g * g;
        theta[p] -= lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + config.adam_eps);
      }
    } else {
      for (std::size_t p = 0; p < theta.size(); ++p) theta[p] -= lr * grad[p] * inv_m;
    }
    for (std::size_t i = 0; i < theta.size(); i += 4) theta[i] = std::max(theta[i], k_floor);
  }

  report.final_loss = best_loss;
  report.model = unpack(best, scale);
  return report;
}

MetaballModel model_from_spheres(const std::vector<InscribedSphere>& spheres) {
  require(!spheres.empty(), "no inscribed spheres");
  std::vector<ControlPoint> pts;
  pts.reserve(spheres.size());
  for (const auto& s : spheres) pts.push_back({s.r * s.r, s.c});
  return MetaballModel(std::move(pts));
}

FitReport metaball_image(const VoxelGrid& grid, int n, const GSConfig& config) {
  const PointHull hull = extract_point_hull(grid);
  const ClusteringResult clusters = sphere_clustering(grid, n);
  FitReport report = gradient_search(model_from_spheres(clusters.spheres), hull, config);
  report.exhausted = clusters.exhausted;
  report.frame_offset = hull.centroid;
  return report;
}

double fit_iou(const FitReport& report, const VoxelGrid& grid) {
  return voxel_iou(voxelize_like(report.model, grid, report.frame_offset), grid);
}

}  // namespace mbf
