#include "mbf/generate.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mbf/error.hpp"
#include "mbf/rng.hpp"

namespace mbf {

Generated decode_latent(const GeneratorModel& model, const LatentVector& z, double k_floor) {
  if (!z.allFinite()) fail(Errc::numeric, "latent vector has non-finite entries");
  const double floor = k_floor < 0.0 ? default_k_floor(model.scaler) : k_floor;
  Deserialized d = deserialize(decode(model.net, z), model.scaler, floor);
  return Generated{z, std::move(d.model), d.clamped};
}

LatentVector encode_model(const GeneratorModel& model, const MetaballModel& particle) {
  return encode(model.net, serialize(particle, model.scaler, model.points())).mu;
}

std::vector<LatentVector> sample_latents(const GeneratorModel& model, std::size_t count, std::uint64_t seed) {
  model.net.validate();
  Rng rng = make_stream(seed, "generate");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = model.net.latent_dim();
  std::vector<LatentVector> out(count);
  for (auto& z : out) {
    z.resize(dim);
    for (int i = 0; i < dim; ++i) z[i] = normal(rng);
  }
  return out;
}

std::vector<Generated> sample_particles(const GeneratorModel& model, std::size_t count, std::uint64_t seed,
                                        double k_floor) {
  std::vector<Generated> out;
  out.reserve(count);
  for (const auto& z : sample_latents(model, count, seed)) out.push_back(decode_latent(model, z, k_floor));
  return out;
}

LatentVector perturb(const LatentVector& z, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0 && std::isfinite(sigma), "perturbation sigma must be non-negative");
  Rng rng = make_stream(seed, "perturb");
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentVector out = z;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sigma * normal(rng);
  return out;
}

LatentVector interpolate(const LatentVector& z1, const LatentVector& z2, double alpha) {
  require(z1.size() == z2.size(), "latent length mismatch");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
  return (1.0 - alpha) * z1 + alpha * z2;
}

LatentVector latent_arithmetic(const std::vector<std::pair<int, LatentVector>>& terms) {
  require(!terms.empty(), "latent arithmetic needs at least one term");
  LatentVector out = LatentVector::Zero(terms.front().second.size());
  for (const auto& [sign, z] : terms) {
    require(z.size() == out.size(), "latent length mismatch");
    require(sign == 1 || sign == -1, "latent term sign must be +1 or -1");
    if (sign > 0)
      out += z;
    else
      out -= z;
  }
  return out;
}

std::string format_latent(const LatentVector& z) {
  std::string out = "latent " + std::to_string(z.size()) + "\n";
  for (Eigen::Index i = 0; i < z.size(); ++i) out += format_double(z[i]) + '\n';
  return out;
}

LatentVector parse_latent(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  long long dim = 0;
  if (!(is >> tag >> dim) || tag != "latent" || dim < 1) fail(Errc::format, "latent: expected 'latent <dim>' header");
  LatentVector z(dim);
  for (long long i = 0; i < dim; ++i) {
    std::string tok;
    if (!(is >> tok)) fail(Errc::format, "latent: expected " + std::to_string(dim) + " values");
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
      fail(Errc::format, "latent: bad value '" + tok + "'");
    z[i] = v;
  }
  std::string extra;
  if (is >> extra) fail(Errc::format, "latent: trailing data");
  return z;
}

void save_latent(const LatentVector& z, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  out << format_latent(z);
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

LatentVector load_latent(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_latent(ss.str());
}

}  // namespace mbf
