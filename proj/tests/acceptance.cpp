// Acceptance checks. Prints one PASS/FAIL line per criterion plus the
// measurements behind it; exits nonzero if any criterion fails.
//
//   acceptance [--only 1,4,7] [--data tests/data/blobs200.mball]

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mbf/fixtures.hpp"
#include "mbf/generate.hpp"
#include "mbf/imaging.hpp"
#include "mbf/metrics.hpp"
#include "mbf/vae.hpp"
#include "mbf/voxel.hpp"

using namespace mbf;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel(double a, double b) { return std::abs(a / b - 1.0); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

struct Report {
  int failures = 0;
  void line(int id, bool ok, const std::string& title, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n       %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr const char* kMetricNames[6] = {"V", "A", "phi", "C", "CSF", "Dns"};
std::array<double, 6> six(const ShapeMetrics& m) { return {m.V, m.A, m.phi, m.C, m.CSF, m.Dns}; }

// ---------------------------------------------------------------- 1
void edt_oracle(Report& rep) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatched = 0, grids = 0;
  auto compare = [&](const VoxelGrid& g) {
    ++grids;
    if (distance_transform(g).values != distance_transform_brute_force(g).values) ++mismatched;
  };
  for (int t = 0; t < 100; ++t) {
    VoxelGrid g({dim(rng), dim(rng), dim(rng)}, 1.0);
    const double fill = u(rng);
    for (auto& v : g.occupancy()) v = u(rng) < fill;
    compare(g);
  }
  for (auto kind : {FixtureKind::ball, FixtureKind::two_balls, FixtureKind::ellipsoid, FixtureKind::angular,
                    FixtureKind::concave}) {
    FixtureParams p;
    p.kind = kind;
    p.scale = 8.0;
    compare(make_fixture(p));
  }
  const double secs = seconds_since(t0);
  rep.line(1, mismatched == 0 && secs < 10.0, "exact distance transform",
           fmt("%d/%d grids differ from brute force (100 random up to 20^3 + 5 fixtures); %.2f s including the oracle",
               mismatched, grids, secs));
}

// ---------------------------------------------------------------- 2
void loss_correctness(Report& rep) {
  const MetaballModel m({{4.0, Vec3::Zero()}});
  auto hull = [](std::vector<Vec3> pts) {
    PointHull h;
    h.points = std::move(pts);
    return h;
  };
  const double l0 = metaball_loss(m, hull({Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2)}));
  const double l1 = metaball_loss(m, hull({Vec3(1, 1, 0)}));   // |p| = sqrt 2, f = 2
  const double l2 = metaball_loss(m, hull({Vec3(2, 2, 0)}));   // |p| = sqrt 8, f = 1/2
  // Neighbouring doubles on each side of a boundary, and the outer branch
  // formulas evaluated exactly at it.
  const double eps = std::numeric_limits<double>::epsilon();
  const double j1 = std::abs(loss_branch(std::nextafter(1.0, 0.0)) - loss_branch(1.0));
  const double j2 = std::abs(loss_branch(std::nextafter(2.0, 3.0)) - loss_branch(2.0));
  const double outer1 = (1.0 - 1.0) * (1.0 - 1.0) + 1.0 / 1.0 - 1.0;
  const double outer2 = (2.0 - 1.0) * (2.0 - 1.0);
  const bool ok = l0 == 0.0 && l1 == 1.0 && l2 == 1.25 && j1 <= 4 * eps && j2 <= 4 * eps &&
                  outer1 == loss_branch(1.0) && outer2 == loss_branch(2.0);
  rep.line(2, ok, "piecewise loss",
           fmt("examples %.17g %.17g %.17g (want 0 1 1.25); jumps at f=1: %.2g, f=2: %.2g", l0, l1, l2, j1, j2));
}

// ---------------------------------------------------------------- 3
double imaging_gradient_error(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-1.0, 1.0), w(0.2, 1.5), rad(0.6, 3.0);
  std::normal_distribution<double> nd;
  for (;;) {
    std::vector<ControlPoint> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({w(rng), Vec3(pos(rng), pos(rng), pos(rng))});
    PointHull h;
    for (int j = 0; j < 50; ++j) h.points.push_back(Vec3(nd(rng), nd(rng), nd(rng)).normalized() * rad(rng));
    const MetaballModel m(pts);
    bool ok = true;
    for (const auto& p : h.points) {
      const double f = evaluate(m, p);
      ok = ok && std::abs(f - 1.0) > 1e-3 && std::abs(f - 2.0) > 1e-3;
      for (const auto& cp : pts) ok = ok && (p - cp.x).norm() > 0.1;
    }
    if (!ok) continue;
    const auto g = loss_gradient(m, h);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (int c = 0; c < 4; ++c) {
        auto at = [&](double delta) {
          auto q = pts;
          if (c == 0)
            q[i].k += delta;
          else
            q[i].x[c - 1] += delta;
          return metaball_loss(MetaballModel(q), h);
        };
        const double base = c == 0 ? pts[i].k : pts[i].x[c - 1];
        const double step = 1e-6 * std::max(1.0, std::abs(base));
        const double fd = (at(step) - at(-step)) / (2 * step);
        const double an = c == 0 ? g.dk[i] : g.dx[i][c - 1];
        num = std::max(num, std::abs(fd - an));
        den = std::max(den, std::abs(fd));
      }
    return num / den;
  }
}

double network_gradient_error(std::uint64_t seed) {
  Architecture a;
  a.input = 4;
  a.encoder_hidden = {8};
  a.latent = 2;
  a.decoder_hidden = {8};
  Rng rng(seed);
  NetworkParameters net = init_network(a, rng);
  std::normal_distribution<double> nd;
  for (Dense* l : net.layers())
    for (Eigen::Index i = 0; i < l->b.size(); ++i) l->b[i] = 0.3 * nd(rng);
  Eigen::MatrixXd x(4, 3), eps(2, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = nd(rng);
  NetworkParameters grads;
  batch_loss(net, x, eps, 0.7, &grads);
  auto p = net.layers();
  auto g = grads.layers();
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l)
    for (int which = 0; which < 2; ++which) {
      double* d = which ? p[l]->b.data() : p[l]->W.data();
      const double* gd = which ? g[l]->b.data() : g[l]->W.data();
      const Eigen::Index n = which ? p[l]->b.size() : p[l]->W.size();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double keep = d[i], h = 1e-6;
        d[i] = keep + h;
        const double up = batch_loss(net, x, eps, 0.7).total;
        d[i] = keep - h;
        const double down = batch_loss(net, x, eps, 0.7).total;
        d[i] = keep;
        const double fd = (up - down) / (2 * h);
        num = std::max(num, std::abs(fd - gd[i]));
        den = std::max(den, std::abs(fd));
      }
    }
  return num / den;
}

void gradient_fidelity(Report& rep) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  double img = 0.0, nn = 0.0;
  for (int t = 0; t < 100; ++t) img = std::max(img, imaging_gradient_error(rng));
  for (int t = 0; t < 100; ++t) nn = std::max(nn, network_gradient_error(500 + t));
  const double secs = seconds_since(t0);
  rep.line(3, img < 1e-5 && nn < 1e-4 && secs < 60.0, "gradient fidelity",
           fmt("worst relative error: loss %.2e (< 1e-5), network %.2e (< 1e-4) over 100 configs each; %.1f s", img,
               nn, secs));
}

// ---------------------------------------------------------------- 4
constexpr double kFixtureScale = 56.0;
constexpr int kAvatarResolution = 96;

void characterization(Report& rep) {
  struct Case {
    FixtureKind kind;
    int n;
  };
  const Case cases[] = {{FixtureKind::ball, 1}, {FixtureKind::two_balls, 2}, {FixtureKind::ellipsoid, 4},
                        {FixtureKind::angular, 20}, {FixtureKind::concave, 20}};
  bool all = true;
  std::ostringstream detail;
  for (const auto& c : cases) {
    const auto t0 = Clock::now();
    FixtureParams p;
    p.kind = c.kind;
    p.scale = kFixtureScale;
    const VoxelGrid grid = make_fixture(p);
    const FitReport fit = metaball_image(grid, c.n, GSConfig{});
    const double iou = fit_iou(fit, grid);
    const auto parent = six(grid_metrics(grid));
    const auto avatar = six(shape_metrics(fit.model, kAvatarResolution));
    const double secs = seconds_since(t0);
    double worst = 0.0;
    int worst_i = 0;
    for (int i = 0; i < 6; ++i)
      if (rel(avatar[i], parent[i]) > worst) {
        worst = rel(avatar[i], parent[i]);
        worst_i = i;
      }
    const bool ok = iou >= 0.95 && worst <= 0.05 && secs < 300.0 && !fit.diverged;
    all = all && ok;
    detail << fmt("%s%-9s n=%-2d IoU %.4f  worst metric %s %.2f%%  %.0f s%s", detail.tellp() ? "\n       " : "",
                  to_string(c.kind).c_str(), c.n, iou, kMetricNames[worst_i], 100 * worst, secs, ok ? "" : "  <--");
  }
  rep.line(4, all, fmt("characterization fidelity (fixtures at scale %.0f voxels)", kFixtureScale), detail.str());
}

// ---------------------------------------------------------------- 5
void control_point_trend(Report& rep) {
  const auto t0 = Clock::now();
  FixtureParams p;
  p.kind = FixtureKind::angular;
  p.scale = kFixtureScale;
  const VoxelGrid grid = make_fixture(p);
  const int ns[] = {5, 10, 20, 40, 60};
  double loss[5];
  parallel_for(5, [&](std::size_t i) { loss[i] = metaball_image(grid, ns[i], GSConfig{}).final_loss; });
  bool monotone = true;
  for (int i = 1; i < 4; ++i) monotone = monotone && loss[i] <= loss[i - 1];
  const double gain = (loss[3] - loss[4]) / loss[3];
  const double secs = seconds_since(t0);
  rep.line(5, monotone && gain < 0.10 && secs < 600.0, "control-point plateau on the angular fixture",
           fmt("final loss n=5,10,20,40,60: %.1f %.1f %.1f %.1f %.1f; 40->60 gain %.1f%% (< 10%%); %.0f s", loss[0],
               loss[1], loss[2], loss[3], loss[4], 100 * gain, secs));
}

// ---------------------------------------------------------------- 6
void metric_sanity(Report& rep) {
  FixtureParams bp;
  bp.kind = FixtureKind::ball;
  bp.scale = kFixtureScale;
  const ShapeMetrics ball_grid = grid_metrics(make_fixture(bp));
  const ShapeMetrics ball_model = shape_metrics(MetaballModel({{1.0, Vec3::Zero()}}), kAvatarResolution);
  double sphere_worst = 0.0;
  for (const auto* m : {&ball_grid, &ball_model})
    for (double v : {m->phi, m->C, m->CSF, m->Dns}) sphere_worst = std::max(sphere_worst, rel(v, 1.0));

  FixtureParams ep;
  ep.kind = FixtureKind::ellipsoid;
  ep.scale = kFixtureScale;
  const double csf = grid_metrics(make_fixture(ep)).CSF;
  const double csf_err = rel(csf, 1.0 / std::sqrt(2.0));

  // Rigid motion of a fitted avatar and of random five-ball models.
  std::vector<MetaballModel> models;
  {
    FixtureParams cp;
    cp.kind = FixtureKind::concave;
    cp.scale = 24.0;
    GSConfig cfg;
    cfg.generations = 500;
    models.push_back(metaball_image(make_fixture(cp), 10, cfg).model);
    const auto blobs = make_blob_dataset(4, 5, 99);
    models.insert(models.end(), blobs.begin(), blobs.end());
  }
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  std::vector<double> worst(models.size(), 0.0);
  std::vector<Eigen::Matrix3d> rot;
  std::vector<Vec3> shift;
  for (std::size_t i = 0; i < models.size(); ++i) {
    rot.push_back(Eigen::Quaterniond(nd(rng), nd(rng), nd(rng), nd(rng)).normalized().toRotationMatrix());
    shift.push_back(Vec3(nd(rng), nd(rng), nd(rng)) * 50.0);
  }
  parallel_for(models.size(), [&](std::size_t i) {
    std::vector<ControlPoint> moved;
    for (const auto& cp : models[i].points()) moved.push_back({cp.k, rot[i] * cp.x + shift[i]});
    const ShapeMetrics a = shape_metrics(models[i], kAvatarResolution);
    const ShapeMetrics b = shape_metrics(MetaballModel(moved), kAvatarResolution);
    for (auto [x, y] : {std::pair{a.V, b.V}, {a.A, b.A}, {a.CSF, b.CSF}, {a.Dn, b.Dn}, {a.Ds, b.Ds},
                        {a.Dns, b.Dns}, {a.phi, b.phi}, {a.C, b.C}})
      worst[i] = std::max(worst[i], rel(y, x));
  });
  const double motion = *std::max_element(worst.begin(), worst.end());
  rep.line(6, sphere_worst < 0.02 && csf_err < 0.02 && motion < 0.01, "metric sanity",
           fmt("sphere phi/C/CSF/Dns worst deviation %.2f%% (< 2%%); ellipsoid CSF %.4f vs 0.7071 (%.2f%%); "
               "rigid motion worst %.2f%% (< 1%%) over %zu models",
               100 * sphere_worst, csf, 100 * csf_err, 100 * motion, models.size()));
}

// ---------------------------------------------------------------- 7-9
struct Trained {
  GeneratorModel model;
  std::vector<MetaballModel> parents;
};

double window_mean(const std::vector<TrainLogEntry>& log, std::size_t from, std::size_t to, bool dist) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += dist ? log[i].distribution : log[i].reconstruction;
  return s / static_cast<double>(to - from);
}

std::optional<Trained> training_behaviour(Report& rep, const std::string& data_path) {
  const auto t0 = Clock::now();
  std::vector<MetaballModel> parents;
  try {
    parents = load_mball_set(data_path);
  } catch (const std::exception& e) {
    rep.line(7, false, "VAE training behaviour", std::string("cannot load dataset: ") + e.what());
    return std::nullopt;
  }
  const auto regenerated = make_blob_dataset(200, 5, 7);
  const bool committed_matches = regenerated == parents;

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.max_steps = 20000;
  const TrainResult res = train(parents, cfg);
  const auto& log = res.log;
  const double secs = seconds_since(t0);
  if (res.diverged || log.size() < 4000) {
    rep.line(7, false, "VAE training behaviour", fmt("diverged=%d after %zu steps", res.diverged, log.size()));
    return std::nullopt;
  }
  // Early phase: the distribution item climbs above its starting value while
  // the reconstruction item falls.
  std::size_t peak = 0;
  for (std::size_t i = 0; i < 1000; ++i)
    if (log[i].distribution > log[peak].distribution) peak = i;
  const bool rises = log[peak].distribution > 1.1 * log[0].distribution && log[peak].reconstruction < log[0].reconstruction;
  // Late phase: compare the last two windows of 1000 steps.
  const std::size_t n = log.size(), w = 1000;
  const double dist_last = window_mean(log, n - w, n, true), dist_prev = window_mean(log, n - 2 * w, n - w, true);
  const double recon_last = window_mean(log, n - w, n, false);
  const bool converged = dist_last > 0.0 && rel(dist_last, dist_prev) < 0.10;
  const double drop = log[0].reconstruction / recon_last;
  const bool ok = committed_matches && rises && converged && drop >= 10.0 && secs < 1800.0;
  rep.line(7, ok, "VAE training behaviour (200 five-ball models, 20000 steps)",
           fmt("distribution %.4g at step 0 -> peak %.4g at step %zu (reconstruction %.4g -> %.4g); "
               "final distribution %.4g (previous window %.4g); reconstruction drop %.0fx (>= 10x); %.0f s",
               log[0].distribution, log[peak].distribution, peak, log[0].reconstruction, log[peak].reconstruction,
               dist_last, dist_prev, drop, secs));
  return Trained{res.model, parents};
}

void generation_distribution(Report& rep, const Trained& t) {
  const auto t0 = Clock::now();
  const auto clones = sample_particles(t.model, 1000, 2024);
  std::vector<std::array<double, 6>> pm(t.parents.size()), cm(clones.size());
  std::atomic<int> failed{0};
  parallel_for(t.parents.size(), [&](std::size_t i) { pm[i] = six(shape_metrics(t.parents[i], 64)); });
  parallel_for(clones.size(), [&](std::size_t i) {
    try {
      cm[i] = six(shape_metrics(clones[i].model, 64));
    } catch (const std::exception&) {
      ++failed;
      cm[i].fill(std::nan(""));
    }
  });
  std::array<double, 6> pmean{}, cmean{};
  for (const auto& m : pm)
    for (int i = 0; i < 6; ++i) pmean[i] += m[i] / pm.size();
  for (const auto& m : cm)
    for (int i = 0; i < 6; ++i) cmean[i] += m[i] / cm.size();
  bool ok = failed == 0;
  std::ostringstream d;
  for (int i = 0; i < 6; ++i) {
    const double e = rel(cmean[i], pmean[i]);
    ok = ok && e <= 0.10;
    d << fmt("%s %.4g/%.4g (%.1f%%)  ", kMetricNames[i], cmean[i], pmean[i], 100 * e);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 900.0;
  rep.line(8, ok, "clone means vs parent means (1000 clones)", d.str() + fmt("\n       clone/parent; %.0f s", secs));
}

void latent_edits(Report& rep, const Trained& t) {
  const auto& m = t.model;
  const LatentVector z1 = encode_model(m, t.parents[0]), z2 = encode_model(m, t.parents[1]);
  const bool endpoints = decode_latent(m, interpolate(z1, z2, 0.0)).model == decode_latent(m, z1).model &&
                         decode_latent(m, interpolate(z1, z2, 1.0)).model == decode_latent(m, z2).model;
  const LatentVector zero = latent_arithmetic({{+1, z1}, {-1, z1}});
  const bool identity = (zero.array() == 0.0).all() && latent_arithmetic({{+1, z1}}) == z1;

  // Mean relative metric change of decoded perturbations, over 20 seeds.
  const auto base = six(shape_metrics(decode_latent(m, z1).model, 64));
  auto disturbance = [&](double sigma) {
    std::vector<double> d(20, 0.0);
    parallel_for(20, [&](std::size_t s) {
      const auto p = six(shape_metrics(decode_latent(m, perturb(z1, sigma, 100 + s)).model, 64));
      for (int i = 0; i < 6; ++i) d[s] += rel(p[i], base[i]) / 6.0;
    });
    double mean = 0.0;
    for (double v : d) mean += v / 20.0;
    return mean;
  };
  const double small = disturbance(0.1), large = disturbance(2.0);
  rep.line(9, endpoints && identity && small < large, "latent edits",
           fmt("interpolation endpoints bit-equal: %s; [+z,-z] = 0 exactly: %s; mean disturbance sigma=0.1: %.4f "
               "< sigma=2.0: %.4f",
               endpoints ? "yes" : "no", identity ? "yes" : "no", small, large));
}

// ---------------------------------------------------------------- 10
void reproducibility(Report& rep, const std::string& data_path) {
  FixtureParams p;
  p.kind = FixtureKind::concave;
  p.scale = 20.0;
  const VoxelGrid grid = make_fixture(p);
  GSConfig cfg;
  cfg.generations = 500;
  cfg.seed = 3;
  const FitReport f1 = metaball_image(grid, 8, cfg), f2 = metaball_image(grid, 8, cfg);
  const bool fit = f1.model == f2.model && f1.loss_history == f2.loss_history && f1.final_loss == f2.final_loss;

  const auto parents = load_mball_set(data_path);
  TrainConfig tc;
  tc.seed = 11;
  tc.max_steps = 100;
  const TrainResult t1 = train(parents, tc), t2 = train(parents, tc);
  bool same_log = t1.log.size() == t2.log.size();
  for (std::size_t i = 0; same_log && i < t1.log.size(); ++i)
    same_log = t1.log[i].reconstruction == t2.log[i].reconstruction && t1.log[i].distribution == t2.log[i].distribution;
  const bool trained = encode_mbvae(t1.model) == encode_mbvae(t2.model) && same_log;

  const auto g1 = sample_particles(t1.model, 50, 9), g2 = sample_particles(t1.model, 50, 9);
  bool generated = g1.size() == g2.size();
  for (std::size_t i = 0; generated && i < g1.size(); ++i)
    generated = g1[i].model == g2[i].model && g1[i].z == g2[i].z;
  rep.line(10, fit && trained && generated, "bit-identical reruns",
           fmt("fit: %s; train (100 steps, full network): %s; generate (50 clones): %s", fit ? "identical" : "DIFFERENT",
               trained ? "identical" : "DIFFERENT", generated ? "identical" : "DIFFERENT"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string data = MBF_TEST_DATA "/blobs200.mball";
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (!std::strcmp(argv[i], "--data") && i + 1 < argc) {
      data = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--data blobs.mball]\n");
      return 2;
    }
  }
  auto want = [&](int c) { return only.empty() || only.count(c); };
  Report rep;
  if (want(1)) edt_oracle(rep);
  if (want(2)) loss_correctness(rep);
  if (want(3)) gradient_fidelity(rep);
  if (want(4)) characterization(rep);
  if (want(5)) control_point_trend(rep);
  if (want(6)) metric_sanity(rep);
  if (want(7) || want(8) || want(9)) {
    const auto trained = training_behaviour(rep, data);
    if (trained) {
      if (want(8)) generation_distribution(rep, *trained);
      if (want(9)) latent_edits(rep, *trained);
    } else {
      if (want(8)) rep.line(8, false, "clone means vs parent means", "no trained model");
      if (want(9)) rep.line(9, false, "latent edits", "no trained model");
    }
  }
  if (want(10)) reproducibility(rep, data);
  std::printf("%d criteria failed\n", rep.failures);
  return rep.failures == 0 ? 0 : 1;
}
