#include <catch_amalgamated.hpp>

#include <cmath>

#include "latentscope/rng.hpp"
#include "latentscope/tucker.hpp"
#include "oracles.hpp"

using namespace latentscope;
using Catch::Matchers::WithinAbs;

namespace {

Tensor3 random_tensor(Dims3 dims, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor3 t(dims);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

double rel_diff(const Tensor3& a, const Tensor3& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::pow(a.values()[i] - b.values()[i], 2);
    den += b.values()[i] * b.values()[i];
  }
  return std::sqrt(num / den);
}

Tensor3 core_of(std::initializer_list<double> v, std::size_t r) {
  Tensor3 c({r, r, r});
  std::size_t i = 0;
  for (double x : v) c.values()[i++] = x;
  return c;
}

}  // namespace

TEST_CASE("a rank-one tensor is recovered exactly at rank one") {
  const Vector a{{1.0, -2.0, 0.5, 3.0}}, b{{0.3, 0.1, -0.7}}, c{{2.0, 1.0, 1.0, -1.0, 0.2}};
  Tensor3 t({4, 3, 5});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 5; ++k) t(i, j, k) = a(i) * b(j) * c(k);
  const TuckerResult r = tucker_hooi(t, {1, 1, 1});
  CHECK(r.rel_error < 1e-12);
  CHECK(rel_diff(tucker_reconstruct(r), t) < 1e-12);
}

TEST_CASE("full multilinear rank reproduces the tensor") {
  const Tensor3 t = random_tensor({4, 5, 3}, 1);
  const TuckerResult r = tucker_hooi(t, {4, 5, 3});
  CHECK(r.rel_error < 1e-12);
  for (std::size_t m = 0; m < 3; ++m) {
    const Matrix g = r.factors[m].transpose() * r.factors[m];
    CHECK((g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("HOOI matches a brute-force ALS oracle on seeded 3x3x3 tensors") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor3 t = random_tensor({3, 3, 3}, 50 + seed);
    HooiConfig cfg;
    cfg.max_iters = 1000;
    cfg.tol = 1e-15;
    const TuckerResult r = tucker_hooi(t, {2, 2, 2}, cfg);
    const Tensor3 oracle = oracle::als_tucker(t, 2, 1000);
    INFO("seed " << seed);
    CHECK(rel_diff(tucker_reconstruct(r), oracle) < 1e-6);
  }
}

TEST_CASE("HOOI fit never decreases and the core holds the fitted norm") {
  const Tensor3 t = random_tensor({8, 7, 6}, 2);
  const TuckerResult r = tucker_hooi(t, {3, 3, 2});
  REQUIRE(r.fit_history.size() == r.iterations + 1);
  for (std::size_t i = 1; i < r.fit_history.size(); ++i) CHECK(r.fit_history[i] >= r.fit_history[i - 1] - 1e-12);
  const double fit = r.core.frobenius_norm() / t.frobenius_norm();
  CHECK_THAT(r.rel_error, WithinAbs(std::sqrt(std::max(0.0, 1.0 - fit * fit)), 1e-9));
}

TEST_CASE("factor signs are fixed by the largest entry") {
  const TuckerResult r = tucker_hooi(random_tensor({6, 5, 4}, 3), {2, 2, 2});
  for (const auto& f : r.factors) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      Eigen::Index arg = 0;
      f.col(c).cwiseAbs().maxCoeff(&arg);
      CHECK(f(arg, c) > 0.0);
    }
  }
}

TEST_CASE("relative error shrinks with nested ranks") {
  const Tensor3 t = random_tensor({6, 6, 6}, 4);
  double prev = 1.0;
  for (std::size_t r = 1; r <= 6; ++r) {
    const double e = tucker_hooi(t, {r, r, r}).rel_error;
    CHECK(e <= prev + 1e-9);
    prev = e;
  }
  CHECK(prev < 1e-12);
}

TEST_CASE("rank checks") {
  const Tensor3 t = random_tensor({3, 4, 5}, 5);
  CHECK_THROWS_AS(tucker_hooi(t, {0, 1, 1}), ArgumentError);
  CHECK_THROWS_AS(tucker_hooi(t, {4, 1, 1}), ArgumentError);
  CHECK_THROWS_AS(tucker_hooi(Tensor3({2, 2, 2}), {1, 1, 1}), DegenerateError);
}

TEST_CASE("core entropy examples") {
  CHECK(core_entropy(core_of({5.0}, 1)) == 0.0);
  CHECK(core_entropy(core_of({0, 0, -4, 0, 0, 0, 0, 0}, 2)) == 0.0);
  Tensor3 flat({3, 3, 3}, -0.4);
  CHECK_THAT(core_entropy(flat), WithinAbs(3 * std::log(3.0), 1e-12));
  CHECK_THAT(core_entropy(flat, EntropyNorm::Squared), WithinAbs(3 * std::log(3.0), 1e-12));
  CHECK_THAT(core_entropy(core_of({3, -1, 0, 0, 0, 0, 0, 0}, 2)), WithinAbs(0.562335, 1e-6));
  CHECK_THAT(core_entropy(core_of({std::sqrt(3.0), 1, 0, 0, 0, 0, 0, 0}, 2), EntropyNorm::Squared),
             WithinAbs(0.562335, 1e-6));
  CHECK_THROWS_AS(core_entropy(Tensor3({2, 2, 2})), DegenerateError);
}

TEST_CASE("core entropy stays within its bounds") {
  for (std::size_t r = 1; r <= 4; ++r) {
    const double h = core_entropy(random_tensor({r, r, r}, 10 + r));
    CHECK(h >= 0.0);
    CHECK(h <= 3 * std::log(static_cast<double>(r)) + 1e-12);
  }
}

TEST_CASE("entropy sweep rows") {
  const Tensor3 truth = random_tensor({5, 6, 7}, 6);
  Tensor3 model = truth;
  for (double& v : model.values()) v *= 0.9;
  const auto rows = entropy_sweep(truth, model, 5);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].r == i + 1);
    CHECK_THAT(rows[i].entropy_model, WithinAbs(rows[i].entropy_truth, 1e-9));
    CHECK_THAT(rows[i].relerr_model, WithinAbs(rows[i].relerr_truth, 1e-9));
    if (i > 0) CHECK(rows[i].relerr_truth <= rows[i - 1].relerr_truth + 1e-9);
  }
  CHECK(rows[0].entropy_truth == 0.0);
  CHECK_THROWS_AS(entropy_sweep(truth, model, 6), ArgumentError);
  CHECK_THROWS_AS(entropy_sweep(truth, random_tensor({5, 6, 8}, 7), 2), DimensionError);
}

TEST_CASE("factor comparison") {
  const Matrix a = tucker_hooi(random_tensor({6, 5, 4}, 8), {3, 2, 2}).factors[0];
  Matrix b = a;
  b.col(1) *= -2.0;
  for (double v : compare_factors(a, b)) CHECK_THAT(v, WithinAbs(1.0, 1e-12));
  CHECK_THROWS_AS(compare_factors(a, a.leftCols(2)), DimensionError);
}

TEST_CASE("zero crossings") {
  CHECK(zero_crossings(Vector{{1.0, -1.0, 1.0}}) == 2);
  CHECK(zero_crossings(Vector{{1.0, 0.0, -1.0}}) == 1);
  CHECK(zero_crossings(Vector{{0.0, 0.0}}) == 0);
  CHECK(zero_crossings(Vector{{-1.0, -2.0, 0.0, -3.0}}) == 0);
}
