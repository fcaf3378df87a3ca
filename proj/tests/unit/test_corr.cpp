#include <catch_amalgamated.hpp>

#include <Eigen/QR>
#include <cmath>

#include "latentscope/corr.hpp"
#include "latentscope/rng.hpp"
#include "oracles.hpp"

using namespace latentscope;
using Catch::Matchers::WithinAbs;

namespace {

Matrix random_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(random_points(d, d, seed));
  return qr.householderQ();
}

void check_ratios(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK_THAT(got[i], WithinAbs(want[i], tol));
}

}  // namespace

TEST_CASE("PCA ratios on hand-worked point sets") {
  check_ratios(pca_evr(rows({{0, 0}, {1, 0}, {2, 0}, {3, 0}})).ratios, {1.0, 0.0}, 1e-15);
  check_ratios(pca_evr(rows({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}})).ratios, {0.5, 0.5}, 1e-15);
  check_ratios(pca_evr(rows({{2, 0}, {-2, 0}, {0, 1}, {0, -1}})).ratios, {0.8, 0.2}, 1e-15);
}

TEST_CASE("PCA ratios are zero-padded to the column count") {
  const PcaResult r = pca_evr(random_points(3, 6, 1));
  REQUIRE(r.ratios.size() == 6);
  for (std::size_t i = 3; i < 6; ++i) CHECK(r.ratios[i] == 0.0);
  CHECK(r.ratios[2] < 1e-25);
  double sum = 0.0;
  for (double v : r.ratios) sum += v;
  CHECK_THAT(sum, WithinAbs(1.0, 1e-14));
}

TEST_CASE("PCA ratios match the covariance eigendecomposition") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix m = random_points(50, 6, 10 + seed);
    m.col(1) += 3.0 * m.col(0);
    m.col(4) *= 0.1;
    check_ratios(pca_evr(m).ratios, oracle::covariance_evr(m), 1e-10);
  }
}

TEST_CASE("PCA ratios are invariant to translation, rotation and scale") {
  const Matrix m = random_points(30, 4, 3);
  const PcaResult base = pca_evr(m);
  Matrix moved = (m * random_orthogonal(4, 4)) * 7.5;
  moved.rowwise() += Eigen::RowVector4d(1, -2, 30, 4);
  check_ratios(pca_evr(moved).ratios, base.ratios, 1e-12);
}

TEST_CASE("PCA rejects constant data and single rows") {
  CHECK_THROWS_AS(pca_evr(Matrix::Constant(5, 3, 2.0)), DegenerateError);
  CHECK_THROWS_AS(pca_evr(Matrix::Ones(1, 3)), ArgumentError);
}

TEST_CASE("EVR curve distance examples") {
  const std::vector<double> a{0.5, 0.5}, b{1.0}, c{0.7, 0.2, 0.1};
  CHECK_THAT(evr_curve_distance(a, b), WithinAbs(1.0, 1e-15));
  CHECK(evr_curve_distance(c, c) == 0.0);
  CHECK_THAT(evr_curve_distance(a, c), WithinAbs(0.2 + 0.3 + 0.1, 1e-15));
  CHECK(evr_curve_distance(a, c) == evr_curve_distance(c, a));
  CHECK_THROWS_AS(evr_curve_distance(a, std::vector<double>{}), ArgumentError);
}

TEST_CASE("univariate CCA equals the absolute Pearson correlation") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = random_points(40, 1, 20 + trial);
    Matrix y = random_points(40, 1, 40 + trial);
    y.col(0) += rng.uniform(-2, 2) * x.col(0);
    const CcaResult r = cca(x, y, 0.0);
    REQUIRE(r.correlations.size() == 1);
    const double ref = std::abs(pearson(Vector(x.col(0)), Vector(y.col(0))));
    CHECK_THAT(r.correlations[0], WithinAbs(ref, 1e-10));
  }
}

TEST_CASE("CCA of a set with an invertible linear image of itself is fully correlated") {
  const Matrix x = random_points(30, 3, 6);
  const Matrix y = x * random_points(3, 3, 7) + Matrix::Constant(30, 3, 4.0);
  const CcaResult r = cca(x, y, 0.0);
  REQUIRE(r.correlations.size() == 3);
  for (double v : r.correlations) CHECK_THAT(v, WithinAbs(1.0, 1e-9));
  CHECK(r.effective_rank() == 3);
}

TEST_CASE("CCA correlations are invariant to affine maps and swap symmetric") {
  const Matrix x = random_points(60, 3, 8);
  Matrix y = random_points(60, 4, 9);
  y.col(0) += x.col(1);
  y.col(2) -= 0.5 * x.col(0);
  const CcaResult base = cca(x, y, 0.0);
  Matrix xa = x * random_points(3, 3, 10);
  xa.rowwise() += Eigen::RowVector3d(5, 6, 7);
  const Matrix ya = y * random_points(4, 4, 11) * 3.0;
  check_ratios(cca(xa, ya, 0.0).correlations, base.correlations, 1e-9);
  check_ratios(cca(y, x, 0.0).correlations, base.correlations, 1e-12);
  for (std::size_t i = 1; i < base.correlations.size(); ++i) CHECK(base.correlations[i] <= base.correlations[i - 1]);
}

TEST_CASE("CCA weights give unit-variance variates with the reported correlations") {
  const Matrix x = random_points(80, 3, 12);
  Matrix y = random_points(80, 2, 13);
  y.col(1) += 0.8 * x.col(2);
  const CcaResult r = cca(x, y, 0.0);
  const Matrix u = center_columns(x) * r.x_weights;
  const Matrix v = center_columns(y) * r.y_weights;
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    CHECK_THAT(u.col(c).squaredNorm() / 79.0, WithinAbs(1.0, 1e-10));
    CHECK_THAT(v.col(c).squaredNorm() / 79.0, WithinAbs(1.0, 1e-10));
    CHECK_THAT(u.col(c).dot(v.col(c)) / 79.0, WithinAbs(r.correlations[static_cast<std::size_t>(c)], 1e-10));
  }
}

TEST_CASE("CCA handles rank deficiency through the ridge") {
  Matrix x = random_points(20, 3, 14);
  x.col(2) = x.col(0) + x.col(1);
  const Matrix y = random_points(20, 2, 15);
  CHECK_THROWS_AS(cca(x, y, 0.0), DegenerateError);
  const CcaResult r = cca(x, y);
  CHECK(r.rank_x == 2);
  CHECK(r.effective_rank() == 2);
  for (double v : r.correlations) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("CCA argument checks") {
  CHECK_THROWS_AS(cca(random_points(10, 2, 1), random_points(9, 2, 2)), DimensionError);
  CHECK_THROWS_AS(cca(random_points(2, 1, 1), random_points(2, 1, 2)), ArgumentError);
  CHECK_THROWS_AS(cca(Matrix::Ones(10, 2), random_points(10, 2, 2)), DegenerateError);
  CHECK_THROWS_AS(cca(random_points(10, 2, 1), random_points(10, 2, 2), -1.0), ArgumentError);
}
