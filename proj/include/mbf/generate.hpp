#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mbf/vae.hpp"

namespace mbf {

using GeneratorModel = VaeModel;
using LatentVector = Eigen::VectorXd;

struct Generated {
  LatentVector z;
  MetaballModel model;
  /// k values raised to the floor while deserializing.
  int clamped = 0;
};

/// Decodes z and maps the result back to physical units. `k_floor` < 0 picks
/// default_k_floor(model.scaler).
Generated decode_latent(const GeneratorModel& model, const LatentVector& z, double k_floor = -1.0);

/// Mean of the approximate posterior of a physical-unit model.
LatentVector encode_model(const GeneratorModel& model, const MetaballModel& particle);

/// `count` standard-normal latents drawn from the seed's "generate" stream.
std::vector<LatentVector> sample_latents(const GeneratorModel& model, std::size_t count, std::uint64_t seed);

std::vector<Generated> sample_particles(const GeneratorModel& model, std::size_t count, std::uint64_t seed,
                                        double k_floor = -1.0);

/// z + delta, delta ~ N(0, sigma^2) elementwise from the seed's "perturb" stream.
LatentVector perturb(const LatentVector& z, double sigma, std::uint64_t seed);

/// (1 - alpha) z1 + alpha z2; exact at both endpoints.
LatentVector interpolate(const LatentVector& z1, const LatentVector& z2, double alpha);

/// Signed elementwise sum; each term is (+1 or -1, z).
LatentVector latent_arithmetic(const std::vector<std::pair<int, LatentVector>>& terms);

/// Text format: "latent <dim>" followed by one value per line.
std::string format_latent(const LatentVector& z);
LatentVector parse_latent(const std::string& text);
void save_latent(const LatentVector& z, const std::filesystem::path& path);
LatentVector load_latent(const std::filesystem::path& path);

}  // namespace mbf
