#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mbf/error.hpp"
#include "mbf/metaball.hpp"
#include "mbf/metrics.hpp"
#include "test_util.hpp"

using namespace mbf;

namespace {

MetaballModel one(double k, Vec3 x = Vec3::Zero()) { return MetaballModel({{k, x}}); }

MetaballModel random_model(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(-2.0, 2.0), w(0.3, 2.0);
  std::vector<ControlPoint> pts;
  for (int i = 0; i < n; ++i) pts.push_back({w(rng), Vec3(pos(rng), pos(rng), pos(rng))});
  return MetaballModel(pts);
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mbf::Error");
  return Errc::numeric;
}

}  // namespace

TEST_CASE("evaluate worked examples") {
  CHECK(evaluate(one(1.0), Vec3(1, 0, 0)) == 1.0);
  CHECK(evaluate(MetaballModel({{1.0, Vec3(-1, 0, 0)}, {1.0, Vec3(1, 0, 0)}}), Vec3::Zero()) == 2.0);
  CHECK(evaluate(one(2.0), Vec3(0, 2, 0)) == 0.5);
}

TEST_CASE("evaluate rejects points on a control point") {
  CHECK(code_of([] { evaluate(one(1.0), Vec3::Zero()); }) == Errc::singularity);
  CHECK(code_of([] { evaluate(one(1.0), Vec3(1e-14, 0, 0)); }) == Errc::singularity);
  CHECK_NOTHROW(evaluate(one(1.0), Vec3(1e-9, 0, 0)));
}

TEST_CASE("contains uses f >= 1") {
  const auto m = one(4.0);
  CHECK(contains(m, Vec3(0, 0, 1)));
  CHECK(contains(m, Vec3(0, 0, 2)));
  CHECK_FALSE(contains(m, Vec3(0, 0, 3)));
}

TEST_CASE("models need finite parameters and at least one point") {
  CHECK_THROWS_AS(MetaballModel(std::vector<ControlPoint>{}), Error);
  CHECK_THROWS_AS(MetaballModel({{std::nan(""), Vec3::Zero()}}), Error);
  CHECK_THROWS_AS(MetaballModel({{1.0, Vec3(INFINITY, 0, 0)}}), Error);
}

TEST_CASE("single point level set is the sphere of radius sqrt(k)") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  const Vec3 c(0.3, -1.2, 2.0);
  const auto m = one(2.5, c);
  for (int i = 0; i < 50; ++i) {
    const Vec3 d = Vec3(g(rng), g(rng), g(rng)).normalized();
    CHECK(evaluate(m, c + std::sqrt(2.5) * d) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("translation, scaling and superposition laws") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_model(rng, 5);
    const auto m2 = random_model(rng, 3);
    const Vec3 t(u(rng), u(rng), u(rng));
    const double s = 0.2 + std::abs(u(rng));
    std::vector<ControlPoint> all = m.points();
    all.insert(all.end(), m2.points().begin(), m2.points().end());
    const MetaballModel unioned(all);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p(u(rng), u(rng), u(rng));
      const double f = evaluate(m, p);
      CHECK(evaluate(m.translated(t), p + t) == doctest::Approx(f).epsilon(1e-12));
      CHECK(evaluate(m.scaled(s), s * p) == doctest::Approx(f).epsilon(1e-12));
      CHECK(evaluate(unioned, p) == doctest::Approx(f + evaluate(m2, p)).epsilon(1e-12));
    }
  }
}

TEST_CASE("unit ball mesh volume and area") {
  const TriangleMesh mesh = mesh_surface(one(1.0), 64);
  CHECK(is_closed(mesh));
  const VolumeArea va = mesh_volume_area(mesh);
  CHECK(std::abs(va.volume / (4.0 * std::numbers::pi / 3.0) - 1.0) < 0.01);
  CHECK(std::abs(va.area / (4.0 * std::numbers::pi) - 1.0) < 0.02);
}

TEST_CASE("mesh is outward oriented and free of degenerate triangles") {
  std::mt19937_64 rng(11);
  const auto m = random_model(rng, 6);
  const TriangleMesh mesh = mesh_surface(m, 48);
  CHECK(is_closed(mesh));
  CHECK(mesh_volume_area(mesh).volume > 0.0);
  double signed_volume = 0.0;
  for (const auto& t : mesh.triangles)
    signed_volume += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]])) / 6.0;
  CHECK(signed_volume > 0.0);
  const double r2 = m.scale() * m.scale();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) CHECK(triangle_area(mesh, t) > 1e-12 * r2);
}

TEST_CASE("mesh volume converges towards the voxel volume") {
  const auto m = one(1.0);
  const double vox = voxelize(m, 0.01).occupied_count() * 1e-6;
  const double coarse = mesh_volume_area(mesh_surface(m, 32)).volume;
  const double fine = mesh_volume_area(mesh_surface(m, 64)).volume;
  CHECK(std::abs(fine - vox) < std::abs(coarse - vox));
}

TEST_CASE("meshing an empty level set fails") {
  CHECK(code_of([] { mesh_surface(one(-1.0), 32); }) == Errc::empty_surface);
  CHECK(code_of([] { mesh_surface(one(0.0), 32); }) == Errc::empty_surface);
  CHECK(code_of([] { mesh_surface(one(5e-324), 32); }) == Errc::empty_surface);
  CHECK_THROWS_AS(mesh_surface(one(1.0), 15), Error);
}

TEST_CASE("negative weights indent the surface") {
  const MetaballModel dented({{1.0, Vec3::Zero()}, {-0.05, Vec3(1.0, 0, 0)}});
  const auto plain = mesh_volume_area(mesh_surface(one(1.0), 48)).volume;
  const auto v = mesh_volume_area(mesh_surface(dented, 48)).volume;
  CHECK(v < plain);
}

TEST_CASE("voxelize a unit ball") {
  const auto g = voxelize(one(1.0), 0.1);
  const double expected = (4.0 * std::numbers::pi / 3.0) / 0.001;
  CHECK(std::abs(g.occupied_count() / expected - 1.0) < 0.02);
  CHECK_THROWS_AS(voxelize(one(1.0), 0.0), Error);
}

TEST_CASE("voxelize is translation invariant in count") {
  std::mt19937_64 rng(5);
  const auto m = random_model(rng, 4);
  const auto base = voxelize(m, 0.1).occupied_count();
  CHECK(voxelize(m.translated(Vec3(0.37, -12.3, 5.05)), 0.1).occupied_count() == base);
}

TEST_CASE("voxelize of separated balls adds up") {
  // Pitch and offsets are exact in binary, so all three lattices line up.
  const auto a = one(1.0, Vec3(-50, 0, 0));
  const auto b = one(0.7, Vec3(50, 3, 0));
  const MetaballModel both({a[0], b[0]});
  const auto sum = voxelize(a, 0.125).occupied_count() + voxelize(b, 0.125).occupied_count();
  CHECK(voxelize(both, 0.125).occupied_count() == sum);
}

TEST_CASE("mball text round trip is bit exact") {
  test::TempDir dir;
  std::mt19937_64 rng(9);
  const auto m = random_model(rng, 7);
  CHECK(parse_mball(format_mball(m)) == m);
  save_mball(m, dir.path() / "m.mball");
  CHECK(load_mball(dir.path() / "m.mball") == m);
  CHECK(format_mball(one(4.0, Vec3(1, 2, 3))) == "metaball 1\n4 1 2 3\n");
}

TEST_CASE("mball parser rejects malformed input") {
  CHECK_THROWS_AS(parse_mball(""), Error);
  CHECK_THROWS_AS(parse_mball("metaball 2\n1 0 0 0\n"), Error);
  CHECK_THROWS_AS(parse_mball("metaball 1\n1 0 0\n"), Error);
  CHECK_THROWS_AS(parse_mball("blob 1\n1 0 0 0\n"), Error);
  CHECK_THROWS_AS(parse_mball("metaball 1\nnan 0 0 0\n"), Error);
}

TEST_CASE("mball sets") {
  std::mt19937_64 rng(2);
  std::vector<MetaballModel> ms{random_model(rng, 2), random_model(rng, 5), random_model(rng, 1)};
  CHECK(parse_mball_set(format_mball_set(ms)) == ms);
  CHECK(parse_mball_set("").empty());
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e300) == "1e+300");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("mesh export") {
  const TriangleMesh mesh = mesh_surface(one(1.0), 16);
  std::ostringstream obj;
  write_obj(mesh, obj);
  const std::string s = obj.str();
  CHECK(s.find("v ") != std::string::npos);
  CHECK(s.find("f ") != std::string::npos);
  std::ostringstream stl;
  write_stl_binary(mesh, stl);
  CHECK(stl.str().size() == 84 + 50 * mesh.triangles.size());
}
