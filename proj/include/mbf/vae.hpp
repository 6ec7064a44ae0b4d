#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mbf/metaball.hpp"
#include "mbf/rng.hpp"

namespace mbf {

/// Maps physical descriptors to network units: coordinates are divided by
/// coordinate_scale and weights by k_scale = coordinate_scale^2, which keeps
/// the level set's shape (f is invariant under x -> x/s, k -> k/s^2).
struct Scaler {
  double coordinate_scale = 1.0;
  double k_scale = 1.0;

  static Scaler from_scale(double coordinate_scale);
  friend bool operator==(const Scaler&, const Scaler&) = default;
};

/// Largest |x_i| + sqrt(k_i) over the dataset (origin-centered frame).
double dataset_bounding_radius(std::span<const MetaballModel> dataset);

/// The dataset bounding radius is mapped to `normalized_radius` network units.
Scaler fit_scaler(std::span<const MetaballModel> dataset, double normalized_radius);

/// [k_1/k_scale, x_1/cs, y_1/cs, z_1/cs, k_2/k_scale, ...]. When
/// `expected_points` is positive the model must have exactly that many points.
Eigen::VectorXd serialize(const MetaballModel& model, const Scaler& scaler, int expected_points = 0);

struct Deserialized {
  MetaballModel model;
  /// Number of k values raised to the floor.
  int clamped = 0;
};

/// Inverse of serialize; k values below `k_floor` (physical units) are raised
/// to it.
Deserialized deserialize(const Eigen::VectorXd& values, const Scaler& scaler, double k_floor);

/// Default floor for decoded weights: 1e-8 * coordinate_scale^2.
double default_k_floor(const Scaler& scaler);

struct Dense {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;

  Eigen::Index inputs() const { return W.cols(); }
  Eigen::Index outputs() const { return W.rows(); }
  friend bool operator==(const Dense& a, const Dense& b) { return a.W == b.W && a.b == b.b; }
};

struct Architecture {
  int input = 0;
  std::vector<int> encoder_hidden{1024, 512, 256, 128};
  int latent = 128;
  std::vector<int> decoder_hidden{256, 512, 1024};
  double leaky_slope = 0.01;
};

/// Encoder hidden layers (leaky ReLU), linear mu and ln(sigma^2) heads, and
/// decoder hidden layers (leaky ReLU) followed by a linear output layer.
struct NetworkParameters {
  std::vector<Dense> encoder;
  Dense mu;
  Dense logvar;
  std::vector<Dense> decoder;
  double leaky_slope = 0.01;

  int input_dim() const;
  int latent_dim() const;
  /// Encoder, mu, logvar, decoder: the order used by files and optimizers.
  std::vector<const Dense*> layers() const;
  std::vector<Dense*> layers();
  void validate() const;
  friend bool operator==(const NetworkParameters&, const NetworkParameters&) = default;
};

/// Glorot-uniform weights, zero biases.
NetworkParameters init_network(const Architecture& arch, Rng& rng);

/// Same shapes, all zeros.
NetworkParameters zeros_like(const NetworkParameters& net);

struct Encoded {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

Encoded encode(const NetworkParameters& net, const Eigen::VectorXd& x);
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& epsilon);
Eigen::VectorXd decode(const NetworkParameters& net, const Eigen::VectorXd& z);

/// Column-batched forms.
Eigen::MatrixXd decode_batch(const NetworkParameters& net, const Eigen::MatrixXd& z);

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double distribution = 0.0;
};

/// reconstruction = |x - x_hat|^2 / d, distribution =
/// sum(mu^2 + sigma^2 - ln sigma^2 - 1) / 2, total = reconstruction +
/// beta * distribution.
VaeLoss vae_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& mu,
                 const Eigen::VectorXd& sigma, double beta);

/// Linear ramp min(step / warmup_steps, 1).
double anneal_weight(long step, long warmup_steps);

/// Mean of vae_loss over the columns of `x` with noise `epsilon` (latent x
/// batch). When `grads` is given it receives d(total)/d(parameters).
VaeLoss batch_loss(const NetworkParameters& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& epsilon,
                   double beta, NetworkParameters* grads = nullptr);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  /// 0 picks enough epochs to cover twice the warmup.
  int epochs = 0;
  /// Hard cap on optimizer steps; 0 means no cap.
  long max_steps = 0;
  std::uint64_t seed = 0;
  int rotations_per_particle = 5;
  int shuffles_per_particle = 50;
  double leaky_slope = 0.01;
  long warmup_steps = 10000;
  // With the constant-variance MSE the decoder noise is ~3 network units, so
  // this sets how much shape detail is worth encoding. Much smaller collapses
  // the posterior; much larger leaves holes in the prior.
  double normalized_radius = 24.0;
  std::vector<int> encoder_hidden{1024, 512, 256, 128};
  int latent = 128;
  std::vector<int> decoder_hidden{256, 512, 1024};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// For each particle: the original plus `rotations` random rotations, each in
/// the original order plus `shuffles - 1` random control-point orders.
/// Output count = N * (1 + rotations) * shuffles.
std::vector<Eigen::VectorXd> augment(const std::vector<Eigen::VectorXd>& dataset, int rotations, int shuffles,
                                     std::uint64_t seed);

struct TrainLogEntry {
  long step = 0;
  double beta = 0.0;
  double reconstruction = 0.0;
  double distribution = 0.0;
};

struct VaeModel {
  NetworkParameters net;
  Scaler scaler;

  int points() const { return net.input_dim() / 4; }
};

struct TrainResult {
  VaeModel model;
  std::vector<TrainLogEntry> log;
  bool diverged = false;
};

using TrainProgress = std::function<void(const TrainLogEntry&)>;

/// Every model in `dataset` must have the same number of control points.
TrainResult train(const std::vector<MetaballModel>& dataset, const TrainConfig& config,
                  const TrainProgress& progress = {});

void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log);

/// ".mbvae" weights file.
std::string encode_mbvae(const VaeModel& model);
VaeModel decode_mbvae(const std::string& bytes, double leaky_slope = 0.01);
void save_mbvae(const VaeModel& model, const std::filesystem::path& path);
VaeModel load_mbvae(const std::filesystem::path& path, double leaky_slope = 0.01);

}  // namespace mbf
