#pragma once

// Tucker decomposition by HOOI with HOSVD initialization, core entropy, and
// truth-vs-model comparisons over cubic multiranks.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/parallel.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

struct TuckerResult {
  Tensor3 core;
  std::array<Matrix, 3> factors;  // dims[m] x ranks[m], orthonormal columns
  double rel_error = 0.0;
  std::vector<double> fit_history;  // ||core|| / ||t||: HOSVD start, then after each sweep
  std::size_t iterations = 0;
};

struct HooiConfig {
  std::size_t max_iters = 50;
  double tol = 1e-8;
};

namespace detail {

inline Matrix leading_left_vectors(const Matrix& m, std::size_t r) {
  const Svd d = svd(m);
  const auto k = static_cast<Eigen::Index>(r);
  Matrix u = Matrix::Zero(m.rows(), k);
  const Eigen::Index have = std::min<Eigen::Index>(k, d.u.cols());
  u.leftCols(have) = d.u.leftCols(have);
  if (have < k) {
    // Unfolding narrower than the requested rank: complete the basis.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(u)};
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), k);
    u.rightCols(k - have) = q.rightCols(k - have);
  }
  return u;
}

/// Flip each column so its largest-magnitude entry is positive.
inline void fix_signs(Matrix& f) {
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    Eigen::Index arg = 0;
    f.col(c).cwiseAbs().maxCoeff(&arg);
    if (f(arg, c) < 0.0) f.col(c) *= -1.0;
  }
}

inline Tensor3 project_except(const Tensor3& t, const std::array<Matrix, 3>& f, std::size_t skip) {
  Tensor3 y = t;
  for (std::size_t m = 0; m < 3; ++m) {
    if (m != skip) y = mode_product(y, f[m].transpose(), m);
  }
  return y;
}

inline Tensor3 reconstruct(const Tensor3& core, const std::array<Matrix, 3>& f) {
  Tensor3 out = core;
  for (std::size_t m = 0; m < 3; ++m) out = mode_product(out, f[m], m);
  return out;
}

}  // namespace detail

inline Tensor3 tucker_reconstruct(const TuckerResult& r) { return detail::reconstruct(r.core, r.factors); }

inline TuckerResult tucker_hooi(const Tensor3& t, const Dims3& ranks, const HooiConfig& cfg = {}) {
  for (std::size_t m = 0; m < 3; ++m) {
    if (ranks[m] < 1 || ranks[m] > t.dim(m)) {
      throw ArgumentError("tucker_hooi: rank " + std::to_string(ranks[m]) + " invalid for mode " +
                          std::to_string(m) + " of size " + std::to_string(t.dim(m)));
    }
  }
  require_finite(t.values(), "tucker_hooi");
  const double norm = t.frobenius_norm();
  if (norm == 0.0) throw DegenerateError("tucker_hooi: zero tensor");

  TuckerResult r;
  for (std::size_t m = 0; m < 3; ++m) r.factors[m] = detail::leading_left_vectors(unfold(t, m), ranks[m]);
  double fit = mode_product(detail::project_except(t, r.factors, 0), r.factors[0].transpose(), 0).frobenius_norm() / norm;
  r.fit_history.push_back(fit);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t m = 0; m < 3; ++m) {
      r.factors[m] = detail::leading_left_vectors(unfold(detail::project_except(t, r.factors, m), m), ranks[m]);
    }
    const double next =
        mode_product(detail::project_except(t, r.factors, 2), r.factors[2].transpose(), 2).frobenius_norm() / norm;
    r.fit_history.push_back(next);
    ++r.iterations;
    const double change = std::abs(next - fit);
    fit = next;
    if (change < cfg.tol * std::max(fit, 1e-300)) break;
  }
  for (auto& f : r.factors) detail::fix_signs(f);
  r.core = mode_product(detail::project_except(t, r.factors, 0), r.factors[0].transpose(), 0);

  const Tensor3 approx = detail::reconstruct(r.core, r.factors);
  double err = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = approx.values()[i] - t.values()[i];
    err += d * d;
  }
  r.rel_error = std::clamp(std::sqrt(err) / norm, 0.0, 1.0);
  return r;
}

enum class EntropyNorm { L1, Squared };

inline const char* to_string(EntropyNorm n) { return n == EntropyNorm::L1 ? "l1" : "squared"; }

/// Shannon entropy (natural log) of the normalized core magnitudes.
inline double core_entropy(const Tensor3& core, EntropyNorm norm = EntropyNorm::L1) {
  auto weight = [norm](double g) { return norm == EntropyNorm::L1 ? std::abs(g) : g * g; };
  double total = 0.0;
  for (double g : core.values()) total += weight(g);
  if (!(total > 0.0)) throw DegenerateError("core_entropy: all-zero core");
  double h = 0.0;
  for (double g : core.values()) {
    const double p = weight(g) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

struct EntropyRow {
  std::size_t r = 0;
  double entropy_truth = 0.0;
  double entropy_model = 0.0;
  double relerr_truth = 0.0;
  double relerr_model = 0.0;
};

inline std::vector<EntropyRow> entropy_sweep(const Tensor3& truth, const Tensor3& model_out, std::size_t r_max,
                                             EntropyNorm norm = EntropyNorm::L1, const HooiConfig& cfg = {}) {
  if (truth.dims() != model_out.dims()) throw DimensionError("entropy_sweep: dims differ");
  const std::size_t limit = std::min({truth.dim(0), truth.dim(1), truth.dim(2)});
  if (r_max < 1 || r_max > limit) {
    throw ArgumentError("entropy_sweep: r_max " + std::to_string(r_max) + " exceeds smallest mode size " +
                        std::to_string(limit));
  }
  std::vector<EntropyRow> rows(r_max);
  parallel_for(r_max, [&](std::size_t idx) {
    const std::size_t r = idx + 1;
    const TuckerResult a = tucker_hooi(truth, {r, r, r}, cfg);
    const TuckerResult b = tucker_hooi(model_out, {r, r, r}, cfg);
    rows[idx] = {r, core_entropy(a.core, norm), core_entropy(b.core, norm), a.rel_error, b.rel_error};
  });
  return rows;
}

/// |Pearson| between matching columns, in rank order.
inline std::vector<double> compare_factors(const Matrix& truth, const Matrix& model) {
  if (truth.rows() != model.rows() || truth.cols() != model.cols()) {
    throw DimensionError("compare_factors: factor shapes differ");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(truth.cols()));
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    out.push_back(std::abs(pearson(Vector(truth.col(c)), Vector(model.col(c)))));
  }
  return out;
}

/// Sign changes along a factor column; exact zeros are skipped.
inline std::size_t zero_crossings(const Vector& v) {
  std::size_t count = 0;
  int last = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const int s = (v(i) > 0.0) - (v(i) < 0.0);
    if (s == 0) continue;
    if (last != 0 && s != last) ++count;
    last = s;
  }
  return count;
}

}  // namespace latentscope
