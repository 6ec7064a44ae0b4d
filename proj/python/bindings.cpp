#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mbf/error.hpp"
#include "mbf/fixtures.hpp"
#include "mbf/generate.hpp"
#include "mbf/imaging.hpp"
#include "mbf/metaball.hpp"
#include "mbf/metrics.hpp"
#include "mbf/vae.hpp"
#include "mbf/voxel.hpp"

namespace py = pybind11;
using namespace mbf;

namespace {

// Models cross the boundary as (n, 4) arrays of [k, x, y, z].
using ModelArray = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

MetaballModel to_model(const ModelArray& a) {
  std::vector<ControlPoint> pts;
  for (Eigen::Index i = 0; i < a.rows(); ++i) pts.push_back({a(i, 0), Vec3(a(i, 1), a(i, 2), a(i, 3))});
  return MetaballModel(std::move(pts));
}

ModelArray from_model(const MetaballModel& m) {
  ModelArray a(m.size(), 4);
  for (std::size_t i = 0; i < m.size(); ++i) a.row(i) << m[i].k, m[i].x.x(), m[i].x.y(), m[i].x.z();
  return a;
}

using Occupancy = py::array_t<std::uint8_t, py::array::f_style | py::array::forcecast>;

// Indexed [i, j, k] with x fastest, matching the storage order.
Occupancy occupancy_of(const VoxelGrid& g) {
  const auto& d = g.dims();
  Occupancy out({d[0], d[1], d[2]});
  std::copy(g.occupancy().begin(), g.occupancy().end(), out.mutable_data());
  return out;
}

VoxelGrid grid_from(Occupancy occ, double voxel_size, const Vec3& origin) {
  if (occ.ndim() != 3) throw py::value_error("occupancy must be a 3-d array");
  VoxelGrid g({static_cast<int>(occ.shape(0)), static_cast<int>(occ.shape(1)), static_cast<int>(occ.shape(2))},
              voxel_size, origin);
  auto dst = g.occupancy();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = occ.data()[i] != 0;
  return g;
}

py::dict metrics_dict(const ShapeMetrics& m) {
  py::dict d;
  d["V"] = m.V;
  d["A"] = m.A;
  d["CSF"] = m.CSF;
  d["Dn"] = m.Dn;
  d["Ds"] = m.Ds;
  d["Dns"] = m.Dns;
  d["phi"] = m.phi;
  d["C"] = m.C;
  return d;
}

std::vector<MetaballModel> to_models(const std::vector<ModelArray>& arrays) {
  std::vector<MetaballModel> out;
  for (const auto& a : arrays) out.push_back(to_model(a));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Metaball particle characterization and generation";

  py::register_exception<Error>(m, "MbfError", PyExc_ValueError);

  py::class_<VoxelGrid>(m, "VoxelGrid")
      .def(py::init(&grid_from), py::arg("occupancy"), py::arg("voxel_size") = 1.0,
           py::arg("origin") = Vec3(Vec3::Zero()))
      .def_property_readonly("dims", &VoxelGrid::dims)
      .def_property_readonly("voxel_size", &VoxelGrid::voxel_size)
      .def_property_readonly("origin", [](const VoxelGrid& g) -> Vec3 { return g.origin(); })
      .def_property_readonly("occupancy", &occupancy_of)
      .def("occupied_count", &VoxelGrid::occupied_count)
      .def("__eq__", [](const VoxelGrid& a, const VoxelGrid& b) { return a == b; });

  m.def("load_grid", [](const std::filesystem::path& p) { return load_voxel_grid(p); }, py::arg("path"));
  m.def(
      "save_grid",
      [](const VoxelGrid& g, const std::filesystem::path& p, bool sparse) {
        save_voxel_grid(g, p, sparse ? GridFormat::sparse_text : GridFormat::binary);
      },
      py::arg("grid"), py::arg("path"), py::arg("sparse") = false);

  m.def(
      "fixture",
      [](const std::string& kind, double scale, double voxel_size, int margin, double gap) {
        FixtureParams p;
        p.kind = parse_fixture_kind(kind);
        p.scale = scale;
        p.voxel_size = voxel_size;
        p.margin = margin;
        p.gap = gap;
        return make_fixture(p);
      },
      py::arg("kind"), py::arg("scale") = 10.0, py::arg("voxel_size") = 1.0, py::arg("margin") = 3,
      py::arg("gap") = -0.6);
  m.def(
      "blob_dataset",
      [](std::size_t count, int balls, std::uint64_t seed) {
        std::vector<ModelArray> out;
        for (const auto& model : make_blob_dataset(count, balls, seed)) out.push_back(from_model(model));
        return out;
      },
      py::arg("count"), py::arg("balls") = 5, py::arg("seed") = 0);

  m.def(
      "distance_transform",
      [](const VoxelGrid& g) {
        const auto& d = g.dims();
        py::array_t<double, py::array::f_style> out({d[0], d[1], d[2]});
        const auto dt = distance_transform(g);
        std::copy(dt.values.begin(), dt.values.end(), out.mutable_data());
        return out;
      },
      py::arg("grid"), "Euclidean distance (voxels) from each occupied voxel to the nearest empty one");

  m.def(
      "evaluate", [](const ModelArray& model, const Vec3& p) { return evaluate(to_model(model), p); },
      py::arg("model"), py::arg("point"));
  m.def(
      "voxelize", [](const ModelArray& model, double voxel_size) { return voxelize(to_model(model), voxel_size); },
      py::arg("model"), py::arg("voxel_size"));
  m.def(
      "mesh",
      [](const ModelArray& model, int resolution) {
        const TriangleMesh mesh = mesh_surface(to_model(model), resolution);
        Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> v(mesh.vertices.size(), 3);
        Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(mesh.triangles.size(), 3);
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) v.row(i) = mesh.vertices[i].transpose();
        for (std::size_t i = 0; i < mesh.triangles.size(); ++i)
          f.row(i) << mesh.triangles[i][0], mesh.triangles[i][1], mesh.triangles[i][2];
        return py::make_tuple(v, f);
      },
      py::arg("model"), py::arg("resolution") = 96, "Closed surface as (vertices, triangles)");
  m.def("load_models", [](const std::filesystem::path& p) {
    std::vector<ModelArray> out;
    for (const auto& model : load_mball_set(p)) out.push_back(from_model(model));
    return out;
  });
  m.def(
      "save_model", [](const ModelArray& model, const std::filesystem::path& p) { save_mball(to_model(model), p); },
      py::arg("model"), py::arg("path"));

  m.def(
      "fit",
      [](const VoxelGrid& grid, int n, int generations, double learning_rate, std::uint64_t seed) {
        GSConfig c;
        c.generations = generations;
        c.learning_rate = learning_rate;
        c.seed = seed;
        const FitReport r = metaball_image(grid, n, c);
        py::dict d;
        d["model"] = from_model(r.model);
        d["initial_loss"] = r.initial_loss;
        d["final_loss"] = r.final_loss;
        d["loss_history"] = r.loss_history;
        d["iou"] = fit_iou(r, grid);
        d["frame_offset"] = r.frame_offset;
        d["exhausted"] = r.exhausted;
        d["diverged"] = r.diverged;
        return d;
      },
      py::arg("grid"), py::arg("n"), py::arg("generations") = 2000, py::arg("learning_rate") = 1e-3,
      py::arg("seed") = 0, "Fit an n-point avatar; the model is in the hull-centered frame");

  m.def(
      "shape_metrics",
      [](const ModelArray& model, int resolution) { return metrics_dict(shape_metrics(to_model(model), resolution)); },
      py::arg("model"), py::arg("resolution") = 96);
  m.def(
      "grid_metrics", [](const VoxelGrid& g) { return metrics_dict(grid_metrics(g)); }, py::arg("grid"));

  py::class_<VaeModel>(m, "Generator")
      .def_property_readonly("latent_dim", [](const VaeModel& v) { return v.net.latent_dim(); })
      .def_property_readonly("points", [](const VaeModel& v) { return v.net.input_dim() / 4; })
      .def("save", [](const VaeModel& v, const std::filesystem::path& p) { save_mbvae(v, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_mbvae(p); })
      .def("encode", [](const VaeModel& v, const ModelArray& a) { return encode_model(v, to_model(a)); })
      .def(
          "decode", [](const VaeModel& v, const LatentVector& z) { return from_model(decode_latent(v, z).model); },
          py::arg("z"))
      .def(
          "sample",
          [](const VaeModel& v, std::size_t count, std::uint64_t seed) {
            std::vector<ModelArray> out;
            for (const auto& g : sample_particles(v, count, seed)) out.push_back(from_model(g.model));
            return out;
          },
          py::arg("count"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::vector<ModelArray>& dataset, long max_steps, long warmup, int batch_size, double learning_rate,
         int rotations, int shuffles, int latent, std::vector<int> encoder_hidden, std::vector<int> decoder_hidden,
         std::uint64_t seed) {
        TrainConfig c;
        c.max_steps = max_steps;
        c.warmup_steps = warmup;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.rotations_per_particle = rotations;
        c.shuffles_per_particle = shuffles;
        c.latent = latent;
        c.encoder_hidden = std::move(encoder_hidden);
        c.decoder_hidden = std::move(decoder_hidden);
        c.seed = seed;
        const auto models = to_models(dataset);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(models, c);
        }
        std::vector<double> recon, dist;
        for (const auto& e : r.log) {
          recon.push_back(e.reconstruction);
          dist.push_back(e.distribution);
        }
        py::dict log;
        log["reconstruction"] = recon;
        log["distribution"] = dist;
        return py::make_tuple(r.model, log);
      },
      py::arg("dataset"), py::arg("max_steps") = 20000, py::arg("warmup") = 10000, py::arg("batch_size") = 64,
      py::arg("learning_rate") = 1e-4, py::arg("rotations") = 5, py::arg("shuffles") = 50, py::arg("latent") = 128,
      py::arg("encoder_hidden") = std::vector<int>{1024, 512, 256, 128},
      py::arg("decoder_hidden") = std::vector<int>{256, 512, 1024}, py::arg("seed") = 0,
      "Train the generator; returns (Generator, {'reconstruction': [...], 'distribution': [...]})");

  m.def("perturb", &perturb, py::arg("z"), py::arg("sigma"), py::arg("seed") = 0);
  m.def("interpolate", &interpolate, py::arg("z1"), py::arg("z2"), py::arg("alpha"));
  m.def(
      "latent_add",
      [](const std::vector<LatentVector>& plus, const std::vector<LatentVector>& minus) {
        std::vector<std::pair<int, LatentVector>> terms;
        for (const auto& z : plus) terms.emplace_back(+1, z);
        for (const auto& z : minus) terms.emplace_back(-1, z);
        return latent_arithmetic(terms);
      },
      py::arg("plus"), py::arg("minus") = std::vector<LatentVector>{});
}
