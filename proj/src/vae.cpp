#include "mbf/vae.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mbf/autodiff.hpp"
#include "mbf/error.hpp"

namespace mbf {

Scaler Scaler::from_scale(double coordinate_scale) {
  require(coordinate_scale > 0.0 && std::isfinite(coordinate_scale), "scaler must be positive");
  return Scaler{coordinate_scale, coordinate_scale * coordinate_scale};
}

double dataset_bounding_radius(std::span<const MetaballModel> dataset) {
  double r = 0.0;
  for (const auto& m : dataset)
    for (const auto& p : m.points()) r = std::max(r, p.x.norm() + std::sqrt(std::max(p.k, 0.0)));
  return r;
}

Scaler fit_scaler(std::span<const MetaballModel> dataset, double normalized_radius) {
  require(!dataset.empty(), "cannot fit a scaler to an empty dataset");
  require(normalized_radius > 0.0, "normalized radius must be positive");
  const double r = dataset_bounding_radius(dataset);
  require(r > 0.0, "dataset has zero extent");
  return Scaler::from_scale(r / normalized_radius);
}

Eigen::VectorXd serialize(const MetaballModel& model, const Scaler& scaler, int expected_points) {
  require(scaler.coordinate_scale > 0.0 && scaler.k_scale > 0.0, "scaler must be positive");
  if (expected_points > 0 && model.size() != static_cast<std::size_t>(expected_points))
    fail(Errc::invalid_argument, "model has " + std::to_string(model.size()) + " control points, expected " +
                                     std::to_string(expected_points));
  Eigen::VectorXd v(4 * model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    v[4 * i] = model[i].k / scaler.k_scale;
    for (int a = 0; a < 3; ++a) v[4 * i + 1 + a] = model[i].x[a] / scaler.coordinate_scale;
  }
  return v;
}

Deserialized deserialize(const Eigen::VectorXd& values, const Scaler& scaler, double k_floor) {
  require(values.size() > 0 && values.size() % 4 == 0, "serialized length must be a positive multiple of 4");
  if (!values.allFinite()) fail(Errc::numeric, "serialized particle has non-finite entries");
  Deserialized out;
  std::vector<ControlPoint> pts(values.size() / 4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double k = values[4 * i] * scaler.k_scale;
    if (k < k_floor) {
      k = k_floor;
      ++out.clamped;
    }
    pts[i].k = k;
    pts[i].x = Vec3(values[4 * i + 1], values[4 * i + 2], values[4 * i + 3]) * scaler.coordinate_scale;
  }
  out.model = MetaballModel(std::move(pts));
  return out;
}

double default_k_floor(const Scaler& scaler) { return 1e-8 * scaler.k_scale; }

int NetworkParameters::input_dim() const { return static_cast<int>(encoder.empty() ? mu.inputs() : encoder.front().inputs()); }

int NetworkParameters::latent_dim() const { return static_cast<int>(mu.outputs()); }

std::vector<const Dense*> NetworkParameters::layers() const {
  std::vector<const Dense*> out;
  for (const auto& l : encoder) out.push_back(&l);
  out.push_back(&mu);
  out.push_back(&logvar);
  for (const auto& l : decoder) out.push_back(&l);
  return out;
}

std::vector<Dense*> NetworkParameters::layers() {
  std::vector<Dense*> out;
  for (auto& l : encoder) out.push_back(&l);
  out.push_back(&mu);
  out.push_back(&logvar);
  for (auto& l : decoder) out.push_back(&l);
  return out;
}

void NetworkParameters::validate() const {
  require(!decoder.empty(), "network needs a decoder output layer");
  for (const Dense* l : layers()) {
    require(l->W.rows() > 0 && l->W.cols() > 0 && l->b.size() == l->W.rows(), "layer shapes are inconsistent");
    require(l->W.allFinite() && l->b.allFinite(), "network weights must be finite");
  }
  Eigen::Index width = input_dim();
  for (const auto& l : encoder) {
    require(l.inputs() == width, "encoder layers do not chain");
    width = l.outputs();
  }
  require(mu.inputs() == width && logvar.inputs() == width && mu.outputs() == logvar.outputs(),
          "latent heads do not match the encoder");
  width = mu.outputs();
  for (const auto& l : decoder) {
    require(l.inputs() == width, "decoder layers do not chain");
    width = l.outputs();
  }
  require(width == input_dim(), "decoder output width differs from the input width");
}

namespace {

Dense glorot(int in, int out, Rng& rng) {
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Dense d;
  d.W.resize(out, in);
  for (Eigen::Index r = 0; r < d.W.rows(); ++r)
    for (Eigen::Index c = 0; c < d.W.cols(); ++c) d.W(r, c) = u(rng);
  d.b = Eigen::VectorXd::Zero(out);
  return d;
}

}  // namespace

NetworkParameters init_network(const Architecture& arch, Rng& rng) {
  require(arch.input > 0 && arch.latent > 0, "network widths must be positive");
  NetworkParameters net;
  net.leaky_slope = arch.leaky_slope;
  int width = arch.input;
  for (int h : arch.encoder_hidden) {
    require(h > 0, "network widths must be positive");
    net.encoder.push_back(glorot(width, h, rng));
    width = h;
  }
  net.mu = glorot(width, arch.latent, rng);
  net.logvar = glorot(width, arch.latent, rng);
  width = arch.latent;
  for (int h : arch.decoder_hidden) {
    require(h > 0, "network widths must be positive");
    net.decoder.push_back(glorot(width, h, rng));
    width = h;
  }
  net.decoder.push_back(glorot(width, arch.input, rng));
  return net;
}

NetworkParameters zeros_like(const NetworkParameters& net) {
  NetworkParameters z = net;
  for (Dense* l : z.layers()) {
    l->W.setZero();
    l->b.setZero();
  }
  return z;
}

namespace {

Eigen::MatrixXd leaky(Eigen::MatrixXd m, double slope) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!(m.data()[i] > 0.0)) m.data()[i] *= slope;
  return m;
}

Eigen::MatrixXd apply(const Dense& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = l.W * x;
  y.colwise() += l.b;
  return y;
}

void check_input(Eigen::Index rows, int expected, const char* what) {
  if (rows != expected)
    fail(Errc::invalid_argument, std::string(what) + " has length " + std::to_string(rows) + ", network expects " +
                                     std::to_string(expected));
}

}  // namespace

Encoded encode(const NetworkParameters& net, const Eigen::VectorXd& x) {
  check_input(x.size(), net.input_dim(), "input");
  Eigen::MatrixXd h = x;
  for (const auto& l : net.encoder) h = leaky(apply(l, h), net.leaky_slope);
  Encoded e;
  e.mu = apply(net.mu, h).col(0);
  e.sigma = (0.5 * apply(net.logvar, h).col(0).array()).exp().matrix();
  return e;
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& epsilon) {
  require(mu.size() == sigma.size() && mu.size() == epsilon.size(), "reparameterize length mismatch");
  return mu + sigma.cwiseProduct(epsilon);
}

Eigen::MatrixXd decode_batch(const NetworkParameters& net, const Eigen::MatrixXd& z) {
  check_input(z.rows(), net.latent_dim(), "latent vector");
  Eigen::MatrixXd h = z;
  for (std::size_t i = 0; i + 1 < net.decoder.size(); ++i) h = leaky(apply(net.decoder[i], h), net.leaky_slope);
  return apply(net.decoder.back(), h);
}

Eigen::VectorXd decode(const NetworkParameters& net, const Eigen::VectorXd& z) { return decode_batch(net, z).col(0); }

VaeLoss vae_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& mu,
                 const Eigen::VectorXd& sigma, double beta) {
  require(x.size() == x_hat.size() && x.size() > 0, "reconstruction length mismatch");
  require(mu.size() == sigma.size(), "latent length mismatch");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
  if (!x.allFinite() || !x_hat.allFinite() || !mu.allFinite() || !sigma.allFinite())
    fail(Errc::numeric, "non-finite loss input");
  VaeLoss out;
  out.reconstruction = (x - x_hat).squaredNorm() / static_cast<double>(x.size());
  const Eigen::ArrayXd var = sigma.array().square();
  out.distribution = 0.5 * (mu.array().square() + var - var.log() - 1.0).sum();
  out.total = out.reconstruction + beta * out.distribution;
  return out;
}

double anneal_weight(long step, long warmup_steps) {
  require(warmup_steps > 0, "warmup must be positive");
  if (step <= 0) return 0.0;
  if (step >= warmup_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup_steps);
}

VaeLoss batch_loss(const NetworkParameters& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& epsilon, double beta,
                   NetworkParameters* grads) {
  check_input(x.rows(), net.input_dim(), "input");
  require(epsilon.rows() == net.latent_dim() && epsilon.cols() == x.cols() && x.cols() > 0,
          "noise shape does not match the batch");
  const double slope = net.leaky_slope;
  ad::Tape t;
  std::vector<std::pair<ad::Var, ad::Var>> vars;
  auto layer = [&](const Dense& l, const ad::Var& in) {
    ad::Var W = grads ? t.variable(l.W) : t.constant(l.W);
    ad::Var b = grads ? t.variable(l.b) : t.constant(l.b);
    vars.emplace_back(W, b);
    return t.add_bias(t.matmul(W, in), b);
  };

  const ad::Var xin = t.constant(x);
  ad::Var h = xin;
  for (const auto& l : net.encoder) h = t.leaky_relu(layer(l, h), slope);
  const ad::Var mu = layer(net.mu, h);
  const ad::Var lv = layer(net.logvar, h);
  const ad::Var sigma = t.exp(t.scale(lv, 0.5));
  ad::Var z = t.add(mu, t.mul(sigma, t.constant(epsilon)));
  for (std::size_t i = 0; i < net.decoder.size(); ++i) {
    z = layer(net.decoder[i], z);
    if (i + 1 < net.decoder.size()) z = t.leaky_relu(z, slope);
  }

  const double batch = static_cast<double>(x.cols());
  const ad::Var recon = t.scale(t.sum(t.square(t.sub(xin, z))), 1.0 / (batch * static_cast<double>(x.rows())));
  const ad::Var kl_terms = t.sub(t.add(t.square(mu), t.exp(lv)), lv);
  const ad::Var dist =
      t.scale(t.add_scalar(t.sum(kl_terms), -static_cast<double>(mu.rows()) * batch), 0.5 / batch);
  const ad::Var total = t.add(recon, t.scale(dist, beta));

  VaeLoss out{total.scalar(), recon.scalar(), dist.scalar()};
  if (grads) {
    t.backward(total);
    *grads = zeros_like(net);
    std::vector<Dense*> g = grads->layers();
    // Layer creation order: encoder, mu, logvar, decoder, same as layers().
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (vars[i].first.grad().size() != 0) g[i]->W = vars[i].first.grad();
      if (vars[i].second.grad().size() != 0) g[i]->b = vars[i].second.grad().col(0);
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> augment(const std::vector<Eigen::VectorXd>& dataset, int rotations, int shuffles,
                                     std::uint64_t seed) {
  require(!dataset.empty(), "cannot augment an empty dataset");
  require(rotations >= 0 && shuffles >= 1, "augmentation needs rotations >= 0 and shuffles >= 1");
  Rng rng = make_stream(seed, "augment");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(dataset.size() * static_cast<std::size_t>(1 + rotations) * static_cast<std::size_t>(shuffles));
  for (const auto& v : dataset) {
    require(v.size() > 0 && v.size() % 4 == 0, "serialized length must be a positive multiple of 4");
    const Eigen::Index n = v.size() / 4;
    std::vector<Eigen::Index> order(n);
    for (int r = 0; r <= rotations; ++r) {
      Eigen::VectorXd variant = v;
      if (r > 0) {
        Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
        const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
        for (Eigen::Index i = 0; i < n; ++i) variant.segment<3>(4 * i + 1) = R * v.segment<3>(4 * i + 1);
      }
      for (int s = 0; s < shuffles; ++s) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        if (s > 0) std::shuffle(order.begin(), order.end(), rng);
        Eigen::VectorXd shuffled(v.size());
        for (Eigen::Index i = 0; i < n; ++i) shuffled.segment<4>(4 * i) = variant.segment<4>(4 * order[i]);
        out.push_back(std::move(shuffled));
      }
    }
  }
  return out;
}

namespace {

struct Adam {
  NetworkParameters m, v;
  double beta1, beta2, eps, lr;
  long t = 0;

  Adam(const NetworkParameters& net, const TrainConfig& c)
      : m(zeros_like(net)), v(zeros_like(net)), beta1(c.adam_beta1), beta2(c.adam_beta2), eps(c.adam_eps),
        lr(c.learning_rate) {}

  template <class A>
  void update(A& p, const A& g, A& m1, A& m2, double c1, double c2) {
    m1 = beta1 * m1 + (1.0 - beta1) * g;
    m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseAbs2();
    p.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  }

  void step(NetworkParameters& net, const NetworkParameters& grads) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto p = net.layers();
    auto g = grads.layers();
    auto a = m.layers();
    auto b = v.layers();
    for (std::size_t i = 0; i < p.size(); ++i) {
      update(p[i]->W, g[i]->W, a[i]->W, b[i]->W, c1, c2);
      update(p[i]->b, g[i]->b, a[i]->b, b[i]->b, c1, c2);
    }
  }
};

bool finite(const NetworkParameters& net) {
  for (const Dense* l : net.layers())
    if (!l->W.allFinite() || !l->b.allFinite()) return false;
  return true;
}

}  // namespace

TrainResult train(const std::vector<MetaballModel>& dataset, const TrainConfig& config, const TrainProgress& progress) {
  require(!dataset.empty(), "training needs a non-empty dataset");
  require(config.learning_rate > 0.0 && config.batch_size > 0 && config.epochs >= 0 && config.max_steps >= 0 &&
              config.warmup_steps > 0 && config.leaky_slope >= 0.0,
          "training parameters must be positive");
  const int n = static_cast<int>(dataset.front().size());
  for (const auto& m : dataset) require(static_cast<int>(m.size()) == n, "dataset models differ in control-point count");

  TrainResult result;
  result.model.scaler = fit_scaler(dataset, config.normalized_radius);
  std::vector<Eigen::VectorXd> base;
  base.reserve(dataset.size());
  for (const auto& m : dataset) base.push_back(serialize(m, result.model.scaler, n));
  const std::vector<Eigen::VectorXd> samples =
      augment(base, config.rotations_per_particle, config.shuffles_per_particle, config.seed);
  const int d = 4 * n;
  Eigen::MatrixXd data(d, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) data.col(static_cast<Eigen::Index>(i)) = samples[i];

  Architecture arch;
  arch.input = d;
  arch.encoder_hidden = config.encoder_hidden;
  arch.latent = config.latent;
  arch.decoder_hidden = config.decoder_hidden;
  arch.leaky_slope = config.leaky_slope;
  Rng init_rng = make_stream(config.seed, "train.init");
  NetworkParameters& net = result.model.net;
  net = init_network(arch, init_rng);

  Rng order_rng = make_stream(config.seed, "train.order");
  Rng eps_rng = make_stream(config.seed, "train.epsilon");
  std::normal_distribution<double> normal(0.0, 1.0);

  const long count = data.cols();
  const long batch = std::min<long>(config.batch_size, count);
  const long per_epoch = (count + batch - 1) / batch;
  const long epochs = config.epochs > 0 ? config.epochs : std::max(1L, (2 * config.warmup_steps + per_epoch - 1) / per_epoch);

  Adam adam(net, config);
  NetworkParameters grads;
  std::vector<long> order(count);
  long step = 0;
  bool stop = false;
  for (long epoch = 0; epoch < epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), 0L);
    std::shuffle(order.begin(), order.end(), order_rng);
    for (long start = 0; start < count && !stop; start += batch) {
      const long size = std::min(batch, count - start);
      Eigen::MatrixXd xb(d, size);
      for (long c = 0; c < size; ++c) xb.col(c) = data.col(order[start + c]);
      Eigen::MatrixXd eps(config.latent, size);
      for (long c = 0; c < size; ++c)
        for (int r = 0; r < config.latent; ++r) eps(r, c) = normal(eps_rng);
      const double beta = anneal_weight(step, config.warmup_steps);
      const VaeLoss loss = batch_loss(net, xb, eps, beta, &grads);
      if (!std::isfinite(loss.total) || !finite(grads)) {
        result.diverged = true;
        break;
      }
      const TrainLogEntry entry{step, beta, loss.reconstruction, loss.distribution};
      result.log.push_back(entry);
      if (progress) progress(entry);
      adam.step(net, grads);
      ++step;
      if (config.max_steps > 0 && step >= config.max_steps) stop = true;
    }
    if (result.diverged) break;
  }
  return result;
}

void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log) {
  out << "step,beta,reconstruction,distribution\n";
  for (const auto& e : log)
    out << e.step << ',' << format_double(e.beta) << ',' << format_double(e.reconstruction) << ','
        << format_double(e.distribution) << '\n';
}

namespace {

static_assert(std::endian::native == std::endian::little, "mbvae codec assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'B', 'V', 'A'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T) || pos > bytes.size()) fail(Errc::format, "truncated mbvae file");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

// Finds the encoder / heads / decoder split of a flat layer list: the first
// split under which every group chains.
NetworkParameters assemble(std::vector<Dense> layers, int input, int latent, double slope) {
  const std::size_t count = layers.size();
  for (std::size_t heads = 0; heads + 2 < count; ++heads) {
    NetworkParameters net;
    net.leaky_slope = slope;
    net.encoder.assign(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(heads));
    net.mu = layers[heads];
    net.logvar = layers[heads + 1];
    net.decoder.assign(layers.begin() + static_cast<std::ptrdiff_t>(heads + 2), layers.end());
    if (net.input_dim() != input || net.latent_dim() != latent) continue;
    try {
      net.validate();
      return net;
    } catch (const Error&) {
    }
  }
  fail(Errc::format, "mbvae layers do not form an encoder/decoder pair");
}

}  // namespace

std::string encode_mbvae(const VaeModel& model) {
  model.net.validate();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.points()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.net.latent_dim()));
  const auto layers = model.net.layers();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
  for (const Dense* l : layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l->W.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l->W.cols()));
    for (Eigen::Index r = 0; r < l->W.rows(); ++r)
      for (Eigen::Index c = 0; c < l->W.cols(); ++c) put<double>(out, l->W(r, c));
    for (Eigen::Index r = 0; r < l->b.size(); ++r) put<double>(out, l->b[r]);
  }
  put<double>(out, model.scaler.coordinate_scale);
  put<double>(out, model.scaler.k_scale);
  return out;
}

VaeModel decode_mbvae(const std::string& bytes, double leaky_slope) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::format, "not an mbvae file (bad magic)");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) fail(Errc::format, "unsupported mbvae version " + std::to_string(version));
  const auto n = get<std::uint32_t>(bytes, pos);
  const auto latent = get<std::uint32_t>(bytes, pos);
  const auto count = get<std::uint32_t>(bytes, pos);
  if (n == 0 || latent == 0 || count < 3) fail(Errc::format, "mbvae header is inconsistent");
  std::vector<Dense> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = get<std::uint32_t>(bytes, pos);
    const auto cols = get<std::uint32_t>(bytes, pos);
    const std::uint64_t need = (static_cast<std::uint64_t>(rows) * cols + rows) * sizeof(double);
    if (rows == 0 || cols == 0 || need > bytes.size() - pos) fail(Errc::format, "truncated mbvae layer");
    Dense l;
    l.W.resize(rows, cols);
    l.b.resize(rows);
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = get<double>(bytes, pos);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = get<double>(bytes, pos);
    layers.push_back(std::move(l));
  }
  VaeModel model;
  model.scaler.coordinate_scale = get<double>(bytes, pos);
  model.scaler.k_scale = get<double>(bytes, pos);
  if (pos != bytes.size()) fail(Errc::format, "trailing bytes in mbvae file");
  if (!(model.scaler.coordinate_scale > 0.0) || !(model.scaler.k_scale > 0.0))
    fail(Errc::format, "mbvae scaler must be positive");
  model.net = assemble(std::move(layers), static_cast<int>(4 * n), static_cast<int>(latent), leaky_slope);
  return model;
}

void save_mbvae(const VaeModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_mbvae(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io, "failed writing " + path.string());
}

VaeModel load_mbvae(const std::filesystem::path& path, double leaky_slope) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_mbvae(ss.str(), leaky_slope);
}

}  // namespace mbf
