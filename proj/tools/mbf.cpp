#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "mbf/error.hpp"
#include "mbf/fixtures.hpp"
#include "mbf/generate.hpp"
#include "mbf/imaging.hpp"
#include "mbf/metaball.hpp"
#include "mbf/metrics.hpp"
#include "mbf/vae.hpp"
#include "mbf/voxel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mbf;

namespace {

constexpr int kExitNumeric = 1;
constexpr int kExitUsage = 2;

// Writes to a sibling temp file and renames it over `path`.
void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path() && !fs::exists(path.parent_path()))
    fail(Errc::io, "output directory does not exist: " + path.parent_path().string());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(Errc::io, "cannot move output into place: " + path.string());
  }
}

void require_input(const fs::path& p) {
  if (!fs::is_regular_file(p)) fail(Errc::io, "input not found: " + p.string());
}

void require_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) fail(Errc::io, "cannot create output directory " + p.string());
}

int worker_count(int requested) {
  if (const char* env = std::getenv("MBF_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    fail(Errc::invalid_argument, "MBF_THREADS must be a positive integer");
  }
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs job(i) for i in [0, count) on `workers` threads. The first exception
// is rethrown after all workers stop.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void write_sidecar(const fs::path& output, const json& config) {
  write_atomic(output.string() + ".run.json", config.dump(2) + "\n");
}

bool is_grid(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".vgrid" || ext == ".txt" || ext == ".grid";
}

// ---------------------------------------------------------------- fixture

struct FixtureArgs {
  std::string kind = "ball";
  double scale = 24.0;
  double voxel_size = 1.0;
  int margin = 3;
  int dims = 0;
  double gap = -0.6;
  std::vector<double> semi_axes;
  std::string format = "binary";
  fs::path output;
  std::size_t count = 200;
  int balls = 5;
  std::uint64_t seed = 0;
};

int cmd_fixture(const FixtureArgs& a) {
  if (a.kind == "blobs") {
    const auto models = make_blob_dataset(a.count, a.balls, a.seed);
    write_atomic(a.output, format_mball_set(models));
    write_sidecar(a.output, {{"subcommand", "fixture"}, {"kind", "blobs"}, {"count", a.count}, {"balls", a.balls},
                             {"seed", a.seed}});
    return 0;
  }
  FixtureParams p;
  p.kind = parse_fixture_kind(a.kind);
  p.scale = a.scale;
  p.voxel_size = a.voxel_size;
  p.margin = a.margin;
  p.dims = a.dims;
  p.gap = a.gap;
  if (!a.semi_axes.empty()) {
    require(a.semi_axes.size() == 3, "--semi-axes takes three values");
    p.semi_axes = Vec3(a.semi_axes[0], a.semi_axes[1], a.semi_axes[2]);
  }
  const VoxelGrid grid = make_fixture(p);
  if (a.format == "sparse") {
    write_atomic(a.output, encode_sparse_text(grid));
  } else {
    require(a.format == "binary", "--format must be binary or sparse");
    const auto bytes = encode_vgrid(grid);
    write_atomic(a.output, std::string(bytes.begin(), bytes.end()));
  }
  write_sidecar(a.output, {{"subcommand", "fixture"}, {"kind", a.kind}, {"scale", a.scale},
                           {"voxel_size", a.voxel_size}, {"margin", a.margin}, {"dims", a.dims}, {"gap", a.gap},
                           {"seed", a.seed}});
  return 0;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::vector<fs::path> inputs;
  fs::path output_dir = ".";
  int n = 40;
  GSConfig gs;
  double k_floor = 0.0;
  bool has_k_floor = false;
  int workers = 0;
};

int cmd_fit(FitArgs a) {
  for (const auto& p : a.inputs) require_input(p);
  require_dir(a.output_dir);
  if (a.has_k_floor) a.gs.k_floor = a.k_floor;
  std::vector<int> diverged(a.inputs.size(), 0);
  std::mutex log_mutex;
  parallel_for(a.inputs.size(), worker_count(a.workers), [&](std::size_t i) {
    const VoxelGrid grid = load_voxel_grid(a.inputs[i]);
    GSConfig cfg = a.gs;
    const FitReport rep = metaball_image(grid, a.n, cfg);
    const double iou = fit_iou(rep, grid);
    const std::string stem = a.inputs[i].stem().string();
    const fs::path model_path = a.output_dir / (stem + ".mball");
    write_atomic(model_path, format_mball(rep.model));
    std::string report = format_double(rep.initial_loss) + ' ' + format_double(rep.final_loss) + ' ' +
                         std::to_string(rep.loss_history.size()) + ' ' + std::to_string(rep.n) + ' ' +
                         std::to_string(rep.seed) + '\n';
    for (double l : rep.loss_history) report += format_double(l) + '\n';
    write_atomic(a.output_dir / (stem + ".fit.txt"), report);
    write_sidecar(model_path, {{"subcommand", "fit"},
                               {"input", a.inputs[i].string()},
                               {"n", a.n},
                               {"generations", cfg.generations},
                               {"learning_rate", cfg.learning_rate},
                               {"adam_fraction", cfg.adam_fraction},
                               {"seed", cfg.seed},
                               {"initial_loss", rep.initial_loss},
                               {"final_loss", rep.final_loss},
                               {"iou", iou},
                               {"diverged", rep.diverged},
                               {"exhausted", rep.exhausted},
                               {"frame_offset", json::array({rep.frame_offset[0], rep.frame_offset[1], rep.frame_offset[2]})}});
    diverged[i] = rep.diverged ? 1 : 0;
    std::lock_guard lock(log_mutex);
    std::cerr << stem << ": loss " << rep.initial_loss << " -> " << rep.final_loss << ", IoU " << iou
              << (rep.diverged ? " (diverged)" : "") << '\n';
  });
  return std::any_of(diverged.begin(), diverged.end(), [](int d) { return d != 0; }) ? kExitNumeric : 0;
}

// ---------------------------------------------------------------- metrics

int cmd_metrics(const std::vector<fs::path>& inputs, int resolution, const fs::path& output, int workers) {
  for (const auto& p : inputs) require_input(p);
  std::vector<std::string> rows(inputs.size());
  parallel_for(inputs.size(), worker_count(workers), [&](std::size_t i) {
    const ShapeMetrics m = is_grid(inputs[i]) ? grid_metrics(load_voxel_grid(inputs[i]))
                                              : shape_metrics(load_mball(inputs[i]), resolution);
    rows[i] = metrics_csv_row(inputs[i].stem().string(), m);
  });
  std::string csv = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows) csv += r + "\n";
  if (output.empty())
    std::cout << csv;
  else
    write_atomic(output, csv);
  return 0;
}

// ---------------------------------------------------------------- mesh

int cmd_mesh(const fs::path& input, int resolution, const fs::path& output) {
  require_input(input);
  const TriangleMesh mesh = is_grid(input) ? grid_surface(load_voxel_grid(input)) : mesh_surface(load_mball(input), resolution);
  std::ostringstream ss;
  const std::string ext = output.extension().string();
  if (ext == ".stl")
    write_stl_binary(mesh, ss);
  else if (ext == ".obj")
    write_obj(mesh, ss);
  else
    fail(Errc::invalid_argument, "mesh output must end in .obj or .stl");
  write_atomic(output, ss.str());
  return 0;
}

// ---------------------------------------------------------------- train

std::vector<MetaballModel> load_models(const std::vector<fs::path>& inputs) {
  std::vector<MetaballModel> out;
  for (const auto& p : inputs) {
    require_input(p);
    for (auto& m : load_mball_set(p)) out.push_back(std::move(m));
  }
  return out;
}

int cmd_train(const std::vector<fs::path>& inputs, const TrainConfig& cfg, const fs::path& output, const fs::path& log_path) {
  const auto dataset = load_models(inputs);
  if (dataset.empty()) fail(Errc::invalid_argument, "training dataset is empty");
  if (output.has_parent_path() && !fs::is_directory(output.parent_path()))
    fail(Errc::io, "output directory does not exist: " + output.parent_path().string());
  const TrainResult res = train(dataset, cfg, [](const TrainLogEntry& e) {
    if (e.step % 1000 == 0)
      std::cerr << "step " << e.step << " beta " << e.beta << " reconstruction " << e.reconstruction << " distribution "
                << e.distribution << '\n';
  });
  write_atomic(output, encode_mbvae(res.model));
  if (!log_path.empty()) {
    std::ostringstream ss;
    write_train_log(ss, res.log);
    write_atomic(log_path, ss.str());
  }
  write_sidecar(output, {{"subcommand", "train"},
                         {"inputs", json(std::vector<std::string>(inputs.begin(), inputs.end()))},
                         {"models", dataset.size()},
                         {"learning_rate", cfg.learning_rate},
                         {"batch_size", cfg.batch_size},
                         {"epochs", cfg.epochs},
                         {"max_steps", cfg.max_steps},
                         {"warmup_steps", cfg.warmup_steps},
                         {"rotations", cfg.rotations_per_particle},
                         {"shuffles", cfg.shuffles_per_particle},
                         {"normalized_radius", cfg.normalized_radius},
                         {"leaky_slope", cfg.leaky_slope},
                         {"seed", cfg.seed},
                         {"steps", res.log.size()},
                         {"diverged", res.diverged}});
  return res.diverged ? kExitNumeric : 0;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  fs::path model;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  fs::path output_dir;
  fs::path metrics;
  int resolution = 64;
  double k_floor = -1.0;
  int workers = 0;
};

std::string padded(std::size_t i, std::size_t count) {
  std::string s = std::to_string(i);
  const std::size_t width = std::max<std::size_t>(4, std::to_string(count).size());
  return std::string(width - std::min(width, s.size()), '0') + s;
}

int cmd_generate(const GenerateArgs& a) {
  require_input(a.model);
  require_dir(a.output_dir);
  const GeneratorModel model = load_mbvae(a.model);
  const auto clones = sample_particles(model, a.count, a.seed, a.k_floor);
  std::string index = "id,seed,edit_expression\n";
  int clamped = 0;
  for (std::size_t i = 0; i < clones.size(); ++i) {
    const std::string id = "clone_" + padded(i, a.count);
    write_atomic(a.output_dir / (id + ".mball"), format_mball(clones[i].model));
    index += id + ',' + std::to_string(a.seed) + ",sample[" + std::to_string(i) + "]\n";
    clamped += clones[i].clamped;
  }
  write_atomic(a.output_dir / "index.csv", index);
  if (!a.metrics.empty()) {
    std::vector<std::string> rows(clones.size());
    parallel_for(clones.size(), worker_count(a.workers), [&](std::size_t i) {
      rows[i] = metrics_csv_row("clone_" + padded(i, a.count), shape_metrics(clones[i].model, a.resolution));
    });
    std::string csv = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : rows) csv += r + "\n";
    write_atomic(a.metrics, csv);
  }
  if (clamped > 0) std::cerr << clamped << " generated k values were raised to the floor\n";
  write_sidecar(a.output_dir / "index.csv", {{"subcommand", "generate"},
                                             {"model", a.model.string()},
                                             {"count", a.count},
                                             {"seed", a.seed},
                                             {"k_floor", a.k_floor},
                                             {"clamped", clamped}});
  return 0;
}

// ---------------------------------------------------------------- latent

struct LatentArgs {
  fs::path model;
  fs::path input;
  fs::path z;
  fs::path z1;
  fs::path z2;
  std::vector<fs::path> plus;
  std::vector<fs::path> minus;
  double alpha_step = 0.25;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  fs::path output;
  fs::path output_dir;
  fs::path decode_to;
  double k_floor = -1.0;
};

void emit_latent(const LatentArgs& a, const GeneratorModel& model, const LatentVector& z, const json& config) {
  write_atomic(a.output, format_latent(z));
  write_sidecar(a.output, config);
  if (!a.decode_to.empty()) write_atomic(a.decode_to, format_mball(decode_latent(model, z, a.k_floor).model));
}

int cmd_latent(const std::string& op, const LatentArgs& a) {
  require_input(a.model);
  const GeneratorModel model = load_mbvae(a.model);
  const json base = {{"subcommand", "latent " + op}, {"model", a.model.string()}, {"seed", a.seed}};
  if (op == "encode") {
    require_input(a.input);
    emit_latent(a, model, encode_model(model, load_mball(a.input)), base);
  } else if (op == "sample") {
    emit_latent(a, model, sample_latents(model, 1, a.seed).front(), base);
  } else if (op == "decode") {
    require_input(a.z);
    write_atomic(a.output, format_mball(decode_latent(model, load_latent(a.z), a.k_floor).model));
  } else if (op == "perturb") {
    require_input(a.z);
    json cfg = base;
    cfg["sigma"] = a.sigma;
    emit_latent(a, model, perturb(load_latent(a.z), a.sigma, a.seed), cfg);
  } else if (op == "add") {
    std::vector<std::pair<int, LatentVector>> terms;
    std::string expr;
    auto term = [&](int sign, const fs::path& p) {
      require_input(p);
      terms.push_back({sign, load_latent(p)});
      expr += (sign > 0 ? "+" : "-") + p.stem().string();
    };
    if (!a.z1.empty()) term(1, a.z1);
    if (!a.z2.empty()) term(1, a.z2);
    for (const auto& p : a.plus) term(1, p);
    for (const auto& p : a.minus) term(-1, p);
    if (terms.empty()) fail(Errc::invalid_argument, "latent add needs at least one term");
    json cfg = base;
    cfg["expression"] = expr;
    emit_latent(a, model, latent_arithmetic(terms), cfg);
  } else if (op == "interp") {
    require_input(a.z1);
    require_input(a.z2);
    require(a.alpha_step > 0.0 && a.alpha_step <= 1.0, "--alpha-step must lie in (0,1]");
    require_dir(a.output_dir);
    const LatentVector z1 = load_latent(a.z1), z2 = load_latent(a.z2);
    const int steps = static_cast<int>(std::ceil(1.0 / a.alpha_step - 1e-9));
    std::string index = "id,seed,edit_expression\n";
    for (int s = 0; s <= steps; ++s) {
      const double alpha = s == steps ? 1.0 : s * a.alpha_step;
      const std::string id = "interp_" + std::to_string(s);
      const LatentVector z = interpolate(z1, z2, alpha);
      write_atomic(a.output_dir / (id + ".latent"), format_latent(z));
      write_atomic(a.output_dir / (id + ".mball"), format_mball(decode_latent(model, z, a.k_floor).model));
      index += id + ',' + std::to_string(a.seed) + ",interp(" + a.z1.stem().string() + "," + a.z2.stem().string() +
               "," + format_double(alpha) + ")\n";
    }
    write_atomic(a.output_dir / "index.csv", index);
    write_sidecar(a.output_dir / "index.csv", base);
  } else {
    fail(Errc::invalid_argument, "unknown latent operation " + op);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metaball particle characterization and generation"};
  app.require_subcommand(1);
  app.allow_windows_style_options(false);

  FixtureArgs fx;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic voxel fixture or a random model dataset");
  fixture->add_option("--kind", fx.kind, "ball, two_balls, ellipsoid, angular, concave or blobs")->required();
  fixture->add_option("--scale", fx.scale, "Characteristic radius in voxels");
  fixture->add_option("--voxel-size", fx.voxel_size);
  fixture->add_option("--margin", fx.margin);
  fixture->add_option("--dims", fx.dims, "Cubic grid edge (0: fit the shape)");
  fixture->add_option("--gap", fx.gap, "two_balls surface gap in units of scale");
  fixture->add_option("--semi-axes", fx.semi_axes, "ellipsoid semi-axes")->expected(3);
  fixture->add_option("--format", fx.format, "binary or sparse");
  fixture->add_option("--count", fx.count, "blobs: number of models");
  fixture->add_option("--balls", fx.balls, "blobs: control points per model");
  fixture->add_option("--seed", fx.seed);
  fixture->add_option("--output", fx.output)->required();

  FitArgs fit;
  auto* fitc = app.add_subcommand("fit", "Fit metaball avatars to voxel grids");
  fitc->add_option("--input", fit.inputs)->required();
  fitc->add_option("--output-dir", fit.output_dir);
  fitc->add_option("--n", fit.n, "Control points");
  fitc->add_option("--generations", fit.gs.generations);
  fitc->add_option("--learning-rate", fit.gs.learning_rate);
  fitc->add_option("--adam-fraction", fit.gs.adam_fraction);
  fitc->add_option("--k-floor", fit.k_floor)->each([&](const std::string&) { fit.has_k_floor = true; });
  fitc->add_option("--seed", fit.gs.seed);
  fitc->add_option("--workers", fit.workers);

  std::vector<fs::path> metric_inputs;
  int metric_resolution = 96;
  fs::path metric_output;
  int metric_workers = 0;
  auto* metrics = app.add_subcommand("metrics", "Shape metrics CSV for models (.mball) or grids (.vgrid)");
  metrics->add_option("--input", metric_inputs);
  metrics->add_option("--resolution", metric_resolution);
  metrics->add_option("--output", metric_output, "CSV path (default: stdout)");
  metrics->add_option("--workers", metric_workers);

  fs::path mesh_input, mesh_output;
  int mesh_resolution = 96;
  auto* mesh = app.add_subcommand("mesh", "Triangulate a model or grid to OBJ/STL");
  mesh->add_option("--input", mesh_input)->required();
  mesh->add_option("--resolution", mesh_resolution);
  mesh->add_option("--output", mesh_output)->required();

  std::vector<fs::path> train_inputs;
  TrainConfig tc;
  fs::path train_output, train_log;
  auto* trainc = app.add_subcommand("train", "Train the generator on .mball datasets");
  trainc->add_option("--input", train_inputs)->required();
  trainc->add_option("--output", train_output)->required();
  trainc->add_option("--log", train_log, "Training log CSV");
  trainc->add_option("--learning-rate", tc.learning_rate);
  trainc->add_option("--batch-size", tc.batch_size);
  trainc->add_option("--epochs", tc.epochs);
  trainc->add_option("--max-steps", tc.max_steps);
  trainc->add_option("--warmup", tc.warmup_steps);
  trainc->add_option("--rotations", tc.rotations_per_particle);
  trainc->add_option("--shuffles", tc.shuffles_per_particle);
  trainc->add_option("--normalized-radius", tc.normalized_radius);
  trainc->add_option("--seed", tc.seed);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Sample clones from a trained generator");
  gen->add_option("--model", ga.model)->required();
  gen->add_option("--count", ga.count);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--output-dir", ga.output_dir)->required();
  gen->add_option("--metrics", ga.metrics, "Also write clone metrics CSV");
  gen->add_option("--resolution", ga.resolution);
  gen->add_option("--k-floor", ga.k_floor);
  gen->add_option("--workers", ga.workers);

  LatentArgs la;
  std::string latent_op;
  auto* latent = app.add_subcommand("latent", "Latent-space edits");
  latent->add_option("op", latent_op, "encode, sample, decode, perturb, add or interp")
      ->required()
      ->check(CLI::IsMember({"encode", "sample", "decode", "perturb", "add", "interp"}));
  latent->add_option("--model", la.model)->required();
  latent->add_option("--input", la.input, "encode: .mball model");
  latent->add_option("--z", la.z);
  latent->add_option("--z1", la.z1);
  latent->add_option("--z2", la.z2);
  latent->add_option("--plus", la.plus);
  latent->add_option("--minus", la.minus);
  latent->add_option("--alpha-step", la.alpha_step);
  latent->add_option("--sigma", la.sigma);
  latent->add_option("--seed", la.seed);
  latent->add_option("--output", la.output);
  latent->add_option("--output-dir", la.output_dir);
  latent->add_option("--decode", la.decode_to, "Also write the decoded model");
  latent->add_option("--k-floor", la.k_floor);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*fixture) return cmd_fixture(fx);
    if (*fitc) return cmd_fit(fit);
    if (*metrics) return cmd_metrics(metric_inputs, metric_resolution, metric_output, metric_workers);
    if (*mesh) return cmd_mesh(mesh_input, mesh_resolution, mesh_output);
    if (*trainc) return cmd_train(train_inputs, tc, train_output, train_log);
    if (*gen) return cmd_generate(ga);
    if (*latent) {
      if (latent_op != "interp" && la.output.empty()) fail(Errc::invalid_argument, "--output is required");
      return cmd_latent(latent_op, la);
    }
  } catch (const Error& e) {
    std::cerr << "mbf: " << e.what() << '\n';
    switch (e.code()) {
      case Errc::invalid_argument:
      case Errc::format:
      case Errc::io:
        return kExitUsage;
      default:
        return kExitNumeric;
    }
  } catch (const std::exception& e) {
    std::cerr << "mbf: " << e.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
