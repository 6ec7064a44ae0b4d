#include "doctest.h"

#include <random>

#include "mbf/error.hpp"
#include "mbf/fixtures.hpp"
#include "mbf/generate.hpp"
#include "test_util.hpp"

using namespace mbf;

namespace {

const GeneratorModel& trained() {
  static const GeneratorModel model = [] {
    TrainConfig c;
    c.encoder_hidden = {32, 16};
    c.latent = 6;
    c.decoder_hidden = {16, 32};
    c.rotations_per_particle = 1;
    c.shuffles_per_particle = 2;
    c.batch_size = 16;
    c.warmup_steps = 100;
    c.max_steps = 150;
    c.learning_rate = 1e-3;
    c.normalized_radius = 8.0;
    c.seed = 5;
    return train(make_blob_dataset(16, 5, 3), c).model;
  }();
  return model;
}

LatentVector random_latent(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  LatentVector z(dim);
  for (int i = 0; i < dim; ++i) z[i] = nd(rng);
  return z;
}

}  // namespace

TEST_CASE("sampling") {
  const auto& m = trained();
  CHECK(sample_particles(m, 0, 1).empty());
  const auto a = sample_particles(m, 20, 42);
  const auto b = sample_particles(m, 20, 42);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].z == b[i].z);
    CHECK(a[i].model == b[i].model);
    CHECK(a[i].model.size() == 5);
    for (const auto& cp : a[i].model.points()) CHECK(cp.k >= default_k_floor(m.scaler));
  }
  CHECK(sample_latents(m, 3, 42)[0] != sample_latents(m, 3, 43)[0]);
  CHECK(sample_latents(m, 3, 42)[0] == a[0].z);
  CHECK_THROWS_AS(sample_particles(GeneratorModel{}, 1, 1), Error);
}

TEST_CASE("decoded particles are in physical units") {
  const auto& m = trained();
  const LatentVector z = random_latent(1, m.net.latent_dim());
  const Generated g = decode_latent(m, z);
  const auto raw = decode(m.net, z);
  for (int i = 0; i < 5; ++i) {
    if (raw[4 * i] * m.scaler.k_scale >= default_k_floor(m.scaler))
      CHECK(g.model[i].k == doctest::Approx(raw[4 * i] * m.scaler.k_scale).epsilon(1e-15));
    CHECK(g.model[i].x.x() == doctest::Approx(raw[4 * i + 1] * m.scaler.coordinate_scale).epsilon(1e-15));
  }
  // A huge floor clamps everything.
  const Generated clamped = decode_latent(m, z, 1e6);
  CHECK(clamped.clamped == 5);
  LatentVector bad = z;
  bad[0] = NAN;
  CHECK_THROWS_AS(decode_latent(m, bad), Error);
}

TEST_CASE("encode_model returns a latent of the right size") {
  const auto& m = trained();
  const auto data = make_blob_dataset(1, 5, 11);
  CHECK(encode_model(m, data[0]).size() == m.net.latent_dim());
  CHECK_THROWS_AS(encode_model(m, MetaballModel({{1.0, Vec3::Zero()}})), Error);
}

TEST_CASE("perturb") {
  const LatentVector z = random_latent(2, 16);
  CHECK(perturb(z, 0.0, 9) == z);
  CHECK(perturb(z, 0.5, 9) == perturb(z, 0.5, 9));
  CHECK(perturb(z, 0.5, 9) != perturb(z, 0.5, 10));
  // Same seed, scaled noise.
  const LatentVector d1 = perturb(z, 1.0, 3) - z, d2 = perturb(z, 2.0, 3) - z;
  CHECK((d2 - 2.0 * d1).norm() < 1e-12);
  CHECK_THROWS_AS(perturb(z, -1.0, 1), Error);
}

TEST_CASE("interpolate") {
  const LatentVector z1 = random_latent(3, 16), z2 = random_latent(4, 16);
  CHECK(interpolate(z1, z2, 0.0) == z1);
  CHECK(interpolate(z1, z2, 1.0) == z2);
  CHECK(interpolate(z1, z2, 0.5) == 0.5 * (z1 + z2));
  for (double a : {0.1, 0.25, 0.7}) {
    const LatentVector viaArith = latent_arithmetic({{+1, (1.0 - a) * z1}, {+1, a * z2}});
    CHECK((interpolate(z1, z2, a) - viaArith).norm() == 0.0);
  }
  CHECK_THROWS_AS(interpolate(z1, z2, 1.5), Error);
  CHECK_THROWS_AS(interpolate(z1, random_latent(1, 3), 0.5), Error);
}

TEST_CASE("latent arithmetic") {
  const LatentVector z1 = random_latent(5, 16), z2 = random_latent(6, 16), z3 = random_latent(7, 16);
  CHECK(latent_arithmetic({{+1, z1}}) == z1);
  CHECK(latent_arithmetic({{+1, z1}, {-1, z1}}) == LatentVector::Zero(16));
  CHECK(latent_arithmetic({{+1, z1}, {+1, z2}, {-1, z3}}) == (z1 + z2) - z3);
  CHECK_THROWS_AS(latent_arithmetic({}), Error);
  CHECK_THROWS_AS(latent_arithmetic({{2, z1}}), Error);
}

TEST_CASE("edited latents always decode") {
  const auto& m = trained();
  const int dim = m.net.latent_dim();
  const LatentVector z1 = random_latent(8, dim), z2 = random_latent(9, dim);
  std::vector<LatentVector> edits{perturb(z1, 3.0, 1), interpolate(z1, z2, 0.3),
                                  latent_arithmetic({{+1, z1}, {+1, z2}, {-1, random_latent(10, dim)}}),
                                  LatentVector::Constant(dim, 50.0)};
  for (const auto& z : edits) {
    const Generated g = decode_latent(m, z);
    CHECK(g.model.size() == 5);
    for (const auto& cp : g.model.points()) {
      CHECK(std::isfinite(cp.k));
      CHECK(cp.k > 0.0);
      CHECK(cp.x.allFinite());
    }
  }
}

TEST_CASE("latent text format") {
  test::TempDir dir;
  const LatentVector z = random_latent(12, 7);
  CHECK(parse_latent(format_latent(z)) == z);
  CHECK(format_latent(LatentVector::Constant(2, 0.5)) == "latent 2\n0.5\n0.5\n");
  save_latent(z, dir.path() / "z.txt");
  CHECK(load_latent(dir.path() / "z.txt") == z);
  CHECK_THROWS_AS(parse_latent("latent 3\n1\n2\n"), Error);
  CHECK_THROWS_AS(parse_latent("latent 1\n1\n2\n"), Error);
  CHECK_THROWS_AS(parse_latent("vector 1\n1\n"), Error);
  CHECK_THROWS_AS(parse_latent("latent 1\nabc\n"), Error);
}
