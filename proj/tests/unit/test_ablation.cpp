#include <catch_amalgamated.hpp>

#include <cmath>

#include "latentscope/ablation.hpp"
#include "latentscope/field.hpp"
#include "latentscope/rng.hpp"
#include "oracles.hpp"

using namespace latentscope;
using Catch::Matchers::WithinAbs;

namespace {

MmgnModel small_model(std::size_t k, std::uint64_t seed) {
  MmgnArch a;
  a.layers = 2;
  a.hidden = 12;
  a.latent_dim = k;
  return init_model(a, seed);
}

Matrix random_latents(Eigen::Index rows, Eigen::Index k, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix z(rows, k);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 0.5 * rng.normal();
  return z;
}

Tensor3 small_truth(std::size_t nt, std::uint64_t seed) {
  FieldConfig c;
  c.nlat = 6;
  c.nlon = 9;
  c.nt = nt;
  c.waves = {{1.0, 2.0, -1.0, 0.7, 0.1}};
  c.noise_stddev = 0.05;
  c.seed = seed;
  return generate_field(c);
}

}  // namespace

TEST_CASE("ablating an already-zero dimension reproduces the baseline bitwise") {
  const MmgnModel m = small_model(3, 1);
  Matrix z = random_latents(4, 3, 2);
  z.col(1).setZero();
  const Tensor3 truth = small_truth(4, 3);
  const AblationResult r = run_ablation(m, z, truth);
  CHECK(ablate_dimension(m, z, 1, truth) == r.baseline);
  CHECK(r.per_dim[1].total_mse == r.baseline_mse);
}

TEST_CASE("with one latent dimension, ablation is the zero-latent decoder") {
  const MmgnModel m = small_model(1, 4);
  const Matrix z = random_latents(3, 1, 5);
  const Tensor3 truth = small_truth(3, 6);
  const Tensor3 err = ablate_dimension(m, z, 0, truth);
  const std::vector<double> zero{0.0};
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 9; ++j) {
        const double d = decoder_forward(m, grid_point(i, j, 6, 9), zero) - truth(t, i, j);
        CHECK_THAT(err(t, i, j), WithinAbs(d * d, 1e-12));
      }
}

TEST_CASE("per-dimension errors and attribution match a pointwise oracle") {
  const MmgnModel m = small_model(4, 7);
  const Matrix z = random_latents(5, 4, 8);
  const Tensor3 truth = small_truth(5, 9);
  const AblationResult r = run_ablation(m, z, truth);
  REQUIRE(r.per_dim.size() == 4);

  std::vector<Matrix> ex(4, Matrix::Zero(6, 9));
  for (std::size_t d = 0; d < 4; ++d) {
    for (std::size_t t = 0; t < 5; ++t) {
      std::vector<double> zt(4);
      for (std::size_t c = 0; c < 4; ++c) zt[c] = c == d ? 0.0 : z(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 9; ++j) {
          const double e = decoder_forward(m, grid_point(i, j, 6, 9), zt) - truth(t, i, j);
          ex[d](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += e * e / 5.0;
        }
    }
    CHECK((ex[d] - r.per_dim[d].split.e_x).cwiseAbs().maxCoeff() < 1e-12);
  }

  const AttributionMap map = attribution_map(r);
  CHECK(map.labels == oracle::pointwise_attribution(m, z, truth));
  CHECK(attribution_map(m, z, truth).labels == map.labels);
}

TEST_CASE("mean fill replaces the column with its mean") {
  const Matrix z = random_latents(6, 3, 10);
  const Matrix a = ablated_latents(z, 2, AblationFill::Mean);
  for (Eigen::Index t = 0; t < 6; ++t) CHECK(a(t, 2) == z.col(2).mean());
  CHECK(a.leftCols(2) == z.leftCols(2));
  CHECK(ablated_latents(z, 0).col(0).isZero(0.0));
  CHECK_THROWS_AS(ablated_latents(z, 3), ArgumentError);
}

TEST_CASE("error decomposition example") {
  Tensor3 err({2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) err.values()[i] = static_cast<double>(i);
  const ErrorSplit s = error_decompose(err);
  CHECK(s.e_t == std::vector<double>{1.5, 5.5});
  CHECK(s.e_x(0, 0) == 2.0);
  CHECK(s.e_x(0, 1) == 3.0);
  CHECK(s.e_x(1, 0) == 4.0);
  CHECK(s.e_x(1, 1) == 5.0);
}

TEST_CASE("attribution ties go to the lowest dimension") {
  AblationResult r;
  r.per_dim.resize(3);
  r.per_dim[0].split.e_x = Matrix{{1.0, 2.0}};
  r.per_dim[1].split.e_x = Matrix{{1.0, 3.0}};
  r.per_dim[2].split.e_x = Matrix{{0.5, 3.0}};
  const AttributionMap m = attribution_map(r);
  CHECK(m.labels == std::vector<std::uint32_t>{0, 1});
  CHECK_THROWS_AS(attribution_map(AblationResult{}), ArgumentError);
}

TEST_CASE("same-label fraction examples") {
  CHECK(same_label_fraction(std::vector<std::uint32_t>(12, 3), 3, 4) == 1.0);
  const std::vector<std::uint32_t> checker{0, 1, 0, 1, 0, 1, 0, 1, 0};
  CHECK(same_label_fraction(checker, 3, 3) == 0.0);
  // two horizontal stripes: 6 horizontal pairs agree, 3 vertical pairs do not
  const std::vector<std::uint32_t> stripes{0, 0, 0, 0, 1, 1, 1, 1};
  CHECK_THAT(same_label_fraction(stripes, 2, 4), WithinAbs(6.0 / 10.0, 1e-15));
  CHECK_THROWS_AS(same_label_fraction(stripes, 3, 4), DimensionError);
}

TEST_CASE("blocky maps beat their permutation baseline") {
  AttributionMap m{8, 8, {}};
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) m.labels.push_back(static_cast<std::uint32_t>((i / 4) * 2 + j / 4));
  const Coherence c = spatial_coherence(m, 100, 1);
  CHECK(c.permuted.size() == 100);
  CHECK(c.observed > c.permuted_mean);
  CHECK(spatial_coherence(m, 100, 1).permuted == c.permuted);
}

TEST_CASE("ablation shape checks") {
  const MmgnModel m = small_model(2, 11);
  CHECK_THROWS_AS(run_ablation(m, random_latents(3, 2, 12), small_truth(4, 13)), DimensionError);
}
