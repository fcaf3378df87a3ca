#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "latentscope/field.hpp"
#include "latentscope/mmgn.hpp"
#include "latentscope/rng.hpp"
#include "oracles.hpp"

using namespace latentscope;
using Catch::Matchers::WithinAbs;

namespace {

MmgnArch small_arch(std::size_t layers, std::size_t hidden, std::size_t k) {
  MmgnArch a;
  a.layers = layers;
  a.hidden = hidden;
  a.latent_dim = k;
  return a;
}

ObservationSet small_obs(std::size_t nt, double rate, std::uint64_t seed) {
  FieldConfig c;
  c.nlat = 6;
  c.nlon = 7;
  c.nt = nt;
  c.waves = {{0.8, 2.0, 1.0, 0.5, 0.2}};
  c.gradient = 0.4;
  return sample_observations(generate_field(c), rate, seed);
}

Matrix random_latents(Eigen::Index rows, Eigen::Index k, double scale, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix z(rows, k);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = scale * rng.normal();
  return z;
}

std::vector<double> flatten(const MmgnModel& m) {
  std::vector<double> out;
  m.for_each_block([&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void check_gradients(const MmgnModel& base, const Matrix& latents, const ObservationSet& obs, double lambda) {
  for (const auto& g : oracle::gradient_errors(base, latents, obs, lambda)) {
    INFO(g.name);
    CHECK(g.rel_error < 1e-5);
  }
}

/// Independent decoder with every modulation factor fixed at one.
double unmodulated(const MmgnModel& m, const Point2& x) {
  const auto h = static_cast<Eigen::Index>(m.hidden());
  auto g = [&](std::size_t l, Eigen::Index j) {
    const GaborLayer& p = m.gabor[l];
    const double d2 = std::pow(x[0] - p.mu(j, 0), 2) + std::pow(x[1] - p.mu(j, 1), 2);
    return std::exp(-p.gamma(j) / 2 * d2) * std::sin(p.omega(j, 0) * x[0] + p.omega(j, 1) * x[1] + p.phase(j));
  };
  std::vector<double> hid(static_cast<std::size_t>(h));
  for (Eigen::Index j = 0; j < h; ++j) hid[static_cast<std::size_t>(j)] = g(0, j);
  for (std::size_t l = 1; l < m.arch.layers; ++l) {
    std::vector<double> next(static_cast<std::size_t>(h));
    for (Eigen::Index r = 0; r < h; ++r) {
      double s = m.bias[l - 1](r);
      for (Eigen::Index c = 0; c < h; ++c) s += m.linear[l - 1](r, c) * hid[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = s * g(l, r);
    }
    hid = next;
  }
  double u = m.b_out;
  for (Eigen::Index r = 0; r < h; ++r) u += m.w_out(r) * hid[static_cast<std::size_t>(r)];
  return u;
}

}  // namespace

TEST_CASE("Gabor unit at its center with zero frequency and phase pi/2 outputs one") {
  GaborLayer p;
  p.mu = Matrix{{0.3, -0.2}};
  p.gamma = Vector{{5.0}};
  p.omega = Matrix{{0.0, 0.0}};
  p.phase = Vector{{std::numbers::pi / 2}};
  CHECK_THAT(gabor_filter({0.3, -0.2}, p)(0), WithinAbs(1.0, 1e-15));
}

TEST_CASE("Gabor unit with zero scale is a pure sinusoid") {
  GaborLayer p;
  p.mu = Matrix{{0.9, 0.9}};
  p.gamma = Vector{{0.0}};
  p.omega = Matrix{{2.0, -3.0}};
  p.phase = Vector{{0.4}};
  const Point2 x{-0.5, 0.25};
  CHECK_THAT(gabor_filter(x, p)(0), WithinAbs(std::sin(2.0 * -0.5 - 3.0 * 0.25 + 0.4), 1e-15));
}

TEST_CASE("Gabor parameter gradients match finite differences in a single-layer model") {
  const MmgnModel m = init_model(small_arch(1, 6, 2), 3);
  check_gradients(m, random_latents(2, 2, 0.3, 4), small_obs(2, 0.4, 5), 1e-2);
}

TEST_CASE("full gradient of a two-layer h=4 k=2 model matches finite differences") {
  const MmgnModel m = init_model(small_arch(2, 4, 2), 7);
  check_gradients(m, random_latents(3, 2, 0.3, 8), small_obs(3, 0.5, 9), 1e-2);
}

TEST_CASE("three-layer gradient matches finite differences") {
  const MmgnModel m = init_model(small_arch(3, 5, 3), 10);
  check_gradients(m, random_latents(2, 3, 0.2, 11), small_obs(2, 0.5, 12), 1e-3);
}

TEST_CASE("zero latent recovers the unmodulated decoder") {
  const MmgnModel m = init_model(small_arch(3, 8, 4), 13);
  SplitMix64 rng(14);
  const std::vector<double> zero(4, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Point2 x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    CHECK_THAT(decoder_forward(m, x, zero), WithinAbs(unmodulated(m, x), 1e-13));
  }
}

TEST_CASE("zero output weights give the output bias everywhere") {
  MmgnModel m = init_model(small_arch(2, 6, 3), 15);
  m.w_out.setZero();
  m.b_out = 0.7;
  SplitMix64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
    CHECK(decoder_forward(m, {rng.uniform(-1, 1), rng.uniform(-1, 1)}, z) == 0.7);
  }
}

TEST_CASE("batched prediction agrees with the pointwise decoder") {
  const MmgnModel m = init_model(small_arch(3, 16, 3), 17);
  const ObservationSet obs = small_obs(4, 0.5, 18);
  const Matrix z = random_latents(4, 3, 0.5, 19);
  const Batch b = make_batch(obs);
  const Vector pred = predict_batch(m, z, b);
  std::size_t row = 0;
  for (std::size_t t = 0; t < obs.frames.size(); ++t) {
    const std::vector<double> zt(z.row(static_cast<Eigen::Index>(t)).data(), z.row(static_cast<Eigen::Index>(t)).data() + 3);
    for (const auto& o : obs.frames[t]) {
      const double ref = decoder_forward(m, grid_point(o.lat, o.lon, obs.dims[1], obs.dims[2]), zt);
      CHECK_THAT(pred(static_cast<Eigen::Index>(row++)), WithinAbs(ref, 1e-12));
    }
  }
}

TEST_CASE("zero epochs return the latent initialization and no history") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 21;
  const ObservationSet obs = small_obs(30, 0.5, 22);
  const TrainResult r = train(obs, cfg, small_arch(2, 8, 4));
  CHECK(r.loss_history.empty());
  CHECK(r.latents.rows() == 30);
  const double sd = std::sqrt(r.latents.squaredNorm() / static_cast<double>(r.latents.size()));
  CHECK(sd > 0.5 * cfg.latent_init_stddev);
  CHECK(sd < 1.5 * cfg.latent_init_stddev);
  CHECK(flatten(r.model) == flatten(init_model(small_arch(2, 8, 4), 21)));
}

TEST_CASE("training rejects empty observations") {
  ObservationSet obs;
  obs.dims = {2, 4, 4};
  obs.frames.resize(2);
  CHECK_THROWS_AS(train(obs, TrainConfig{}, small_arch(1, 4, 1)), ArgumentError);
}

TEST_CASE("a single frame with 20 observations is memorized") {
  const Tensor3 field = generate_field(default_field_config(3));
  Tensor3 frame0({1, 32, 64});
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t j = 0; j < 64; ++j) frame0(0, i, j) = field(0, i, j);
  }
  const ObservationSet obs = sample_observations(frame0, 20.0 / 2048.0 + 1e-12, 4);
  REQUIRE(obs.total() == 20);
  TrainConfig cfg;
  cfg.epochs = 2000;
  const TrainResult r = train(obs, cfg, MmgnArch{});
  CHECK(r.final_data_loss < 1e-4);
}

TEST_CASE("training is deterministic") {
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.seed = 5;
  const ObservationSet obs = small_obs(5, 0.5, 6);
  const TrainResult a = train(obs, cfg, small_arch(2, 8, 3));
  const TrainResult b = train(obs, cfg, small_arch(2, 8, 3));
  CHECK(flatten(a.model) == flatten(b.model));
  CHECK(a.latents == b.latents);
  CHECK(a.loss_history == b.loss_history);
}

TEST_CASE("smoothed training loss is nonincreasing on the default dataset") {
  const ObservationSet obs = sample_observations(generate_field(default_field_config(0)), 0.05, 1);
  TrainConfig cfg;
  cfg.epochs = 300;
  const TrainResult r = train(obs, cfg, MmgnArch{});
  REQUIRE(r.loss_history.size() == 300);
  std::vector<double> smooth;
  for (std::size_t e = 0; e + 10 <= r.loss_history.size(); e += 10) {
    double s = 0.0;
    for (std::size_t i = e; i < e + 10; ++i) s += r.loss_history[i];
    smooth.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) {
    INFO("window " << i);
    CHECK(smooth[i] <= smooth[i - 1]);
  }
}

TEST_CASE("reconstruction at training dims reproduces the final data loss") {
  TrainConfig cfg;
  cfg.epochs = 40;
  const ObservationSet obs = small_obs(6, 0.3, 7);
  const TrainResult r = train(obs, cfg, small_arch(3, 16, 4));
  const Tensor3 recon = reconstruct_grid(r.model, r.latents, obs.dims);
  double mse = 0.0;
  for (std::size_t t = 0; t < obs.frames.size(); ++t) {
    for (const auto& o : obs.frames[t]) mse += std::pow(recon(t, o.lat, o.lon) - o.value, 2);
  }
  mse /= static_cast<double>(obs.total());
  CHECK_THAT(mse, WithinAbs(r.final_data_loss, 1e-12));
}

TEST_CASE("reconstruction honors requested dims and checks latent rows") {
  const MmgnModel m = init_model(small_arch(2, 8, 2), 8);
  const Matrix z = random_latents(3, 2, 0.1, 9);
  CHECK(reconstruct_grid(m, z, {3, 6, 14}).dims() == Dims3{3, 6, 14});
  CHECK_THROWS_AS(reconstruct_grid(m, z, {4, 6, 7}), DimensionError);
}

TEST_CASE("grid reconstruction matches pointwise evaluation") {
  const MmgnModel m = init_model(small_arch(3, 8, 2), 10);
  const Matrix z = random_latents(2, 2, 0.4, 11);
  const Tensor3 g = reconstruct_grid(m, z, {2, 5, 9});
  for (std::size_t t = 0; t < 2; ++t) {
    const std::vector<double> zt{z(static_cast<Eigen::Index>(t), 0), z(static_cast<Eigen::Index>(t), 1)};
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 9; ++j) CHECK_THAT(g(t, i, j), WithinAbs(decoder_forward(m, grid_point(i, j, 5, 9), zt), 1e-12));
    }
  }
}

TEST_CASE("decoder output varies continuously between grid nodes") {
  const MmgnModel m = init_model(MmgnArch{}, 12);
  const std::vector<double> z(16, 0.05);
  SplitMix64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Point2 x{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    const double a = 1e-4;
    const double g0 = (decoder_forward(m, {x[0] + a, x[1]}, z) - decoder_forward(m, {x[0] - a, x[1]}, z)) / (2 * a);
    const double g1 = (decoder_forward(m, {x[0], x[1] + a}, z) - decoder_forward(m, {x[0], x[1] - a}, z)) / (2 * a);
    const double c = 2.0 * std::hypot(g0, g1) + 1e-6;
    const double d = 1e-6;
    const double du = std::abs(decoder_forward(m, {x[0] + d, x[1] + d}, z) - decoder_forward(m, x, z));
    CHECK(du <= c * std::sqrt(2.0) * d + 1e-12);
  }
}

TEST_CASE("latent inference recovers a synthesized latent without touching the decoder") {
  const MmgnModel m = init_model(small_arch(3, 16, 2), 14);
  const std::vector<double> z_star{0.4, -0.3};
  std::vector<Observation> frame;
  SplitMix64 rng(15);
  const Dims3 dims{1, 16, 16};
  for (std::size_t flat : rng.sample_without_replacement(256, 60)) {
    const std::size_t i = flat / 16, j = flat % 16;
    frame.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                     decoder_forward(m, grid_point(i, j, 16, 16), z_star)});
  }
  const std::vector<double> before = flatten(m);
  InferConfig cfg;
  cfg.lambda = 0.0;
  const Vector z = infer_latent(m, frame, dims, cfg);
  CHECK(flatten(m) == before);

  double mse = 0.0;
  for (const auto& o : frame) {
    mse += std::pow(decoder_forward(m, grid_point(o.lat, o.lon, 16, 16), {z.data(), 2}) - o.value, 2);
  }
  mse /= static_cast<double>(frame.size());
  CHECK(mse <= 0.0 + 1e-8);
}

TEST_CASE("latent inference with zero iterations returns the initialization") {
  const MmgnModel m = init_model(small_arch(2, 4, 3), 16);
  const std::vector<Observation> frame{{0, 0, 1.0}, {1, 1, 2.0}};
  const Vector init{{0.1, 0.2, 0.3}};
  InferConfig cfg;
  cfg.iterations = 0;
  CHECK(infer_latent(m, frame, {1, 4, 4}, cfg, init) == init);
  CHECK_THROWS_AS(infer_latent(m, std::span<const Observation>{}, {1, 4, 4}, cfg), ArgumentError);
}
