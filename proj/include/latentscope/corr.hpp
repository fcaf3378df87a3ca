#pragma once

// PCA explained-variance curves and canonical correlation analysis.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

inline Matrix center_columns(const Matrix& m) {
  Matrix c = m;
  c.rowwise() -= m.colwise().mean();
  return c;
}

struct PcaResult {
  std::vector<double> ratios;  // length cols, zero-padded past min(rows, cols)
  Matrix components;           // cols x min(rows, cols), principal directions as columns
};

inline PcaResult pca_evr(const Matrix& m) {
  if (m.rows() < 2) throw ArgumentError("pca_evr: need at least two rows");
  require_finite(m, "pca_evr");
  const Svd d = svd(center_columns(m));
  const double total = d.s.squaredNorm();
  if (!(total > 0.0)) throw DegenerateError("pca_evr: zero total variance");
  PcaResult r;
  r.ratios.assign(static_cast<std::size_t>(m.cols()), 0.0);
  for (Eigen::Index i = 0; i < d.s.size(); ++i) r.ratios[static_cast<std::size_t>(i)] = d.s(i) * d.s(i) / total;
  r.components = d.vt.transpose();
  return r;
}

/// L1 distance between two ratio curves, the shorter one zero-padded.
inline double evr_curve_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ArgumentError("evr_curve_distance: empty curve");
  double d = 0.0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    d += std::abs((i < a.size() ? a[i] : 0.0) - (i < b.size() ? b[i] : 0.0));
  }
  return d;
}

struct CcaResult {
  std::vector<double> correlations;  // descending
  Matrix x_weights;                  // p x r; X_centered * x_weights gives unit-variance variates
  Matrix y_weights;                  // q x r
  std::size_t rank_x = 0;
  std::size_t rank_y = 0;
  std::size_t effective_rank() const { return std::min(rank_x, rank_y); }
};

namespace detail {

inline std::size_t numeric_rank(const Vector& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.size() == 0) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * s(0);
  std::size_t r = 0;
  while (r < static_cast<std::size_t>(s.size()) && s(static_cast<Eigen::Index>(r)) > tol) ++r;
  return r;
}

}  // namespace detail

/// Canonical correlations from the SVD of the ridge-whitened cross-covariance.
/// Both sets are centered and reduced to their numerical column space first,
/// so the whitening reduces to a diagonal scale on each thin SVD basis.
inline CcaResult cca(const Matrix& x, const Matrix& y, double ridge = 1e-8) {
  if (x.rows() != y.rows()) throw DimensionError("cca: row counts differ");
  if (x.rows() < 3) throw ArgumentError("cca: need at least three rows");
  if (!(ridge >= 0.0)) throw ArgumentError("cca: ridge must be nonnegative");
  require_finite(x, "cca");
  require_finite(y, "cca");
  const double n1 = static_cast<double>(x.rows() - 1);

  const Svd dx = svd(center_columns(x));
  const Svd dy = svd(center_columns(y));
  CcaResult r;
  r.rank_x = detail::numeric_rank(dx.s, x.rows(), x.cols());
  r.rank_y = detail::numeric_rank(dy.s, y.rows(), y.cols());
  if (r.rank_x == 0 || r.rank_y == 0) throw DegenerateError("cca: a set has zero variance");
  if (ridge == 0.0 && (r.rank_x < static_cast<std::size_t>(x.cols()) || r.rank_y < static_cast<std::size_t>(y.cols()))) {
    throw DegenerateError("cca: singular whitening (rank-deficient set with zero ridge)");
  }

  const auto rx = static_cast<Eigen::Index>(r.rank_x);
  const auto ry = static_cast<Eigen::Index>(r.rank_y);
  auto scale = [&](const Vector& s, Eigen::Index k) {
    Vector out(k);
    for (Eigen::Index i = 0; i < k; ++i) out(i) = s(i) / std::sqrt(s(i) * s(i) + n1 * ridge);
    return out;
  };
  const Vector ax = scale(dx.s, rx);
  const Vector ay = scale(dy.s, ry);
  const Matrix k = ax.asDiagonal() * (dx.u.leftCols(rx).transpose() * dy.u.leftCols(ry)) * ay.asDiagonal();
  const Svd dk = svd(k);

  const Eigen::Index m = std::min(rx, ry);
  r.correlations.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) r.correlations[static_cast<std::size_t>(i)] = std::min(dk.s(i), 1.0);

  auto whiten = [&](const Vector& s, Eigen::Index k) {
    Vector out(k);
    for (Eigen::Index i = 0; i < k; ++i) out(i) = 1.0 / std::sqrt(s(i) * s(i) / n1 + ridge);
    return out;
  };
  r.x_weights = dx.vt.topRows(rx).transpose() * whiten(dx.s, rx).asDiagonal() * dk.u.leftCols(m);
  r.y_weights = dy.vt.topRows(ry).transpose() * whiten(dy.s, ry).asDiagonal() * dk.vt.topRows(m).transpose();
  return r;
}

}  // namespace latentscope
