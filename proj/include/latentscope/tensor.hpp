#pragma once

// Dense matrix and rank-3 tensor primitives shared by every analysis.
//
// Layout is fixed globally: row-major, time slowest. A Tensor3 with dims
// (nt, nlat, nlon) stores value (t, i, j) at offset (t * nlat + i) * nlon + j.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "latentscope/errors.hpp"

namespace latentscope {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Dims3 = std::array<std::size_t, 3>;

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite value");
  }
}

inline void require_finite(const Matrix& m, const char* what) {
  require_finite(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), what);
}

class Tensor3 {
 public:
  Tensor3() = default;

  explicit Tensor3(Dims3 dims, double fill = 0.0) : dims_(dims) {
    check_dims(dims);
    values_.assign(dims[0] * dims[1] * dims[2], fill);
  }

  Tensor3(Dims3 dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
    check_dims(dims);
    if (values_.size() != dims[0] * dims[1] * dims[2]) {
      throw DimensionError("Tensor3: value count does not match dims");
    }
  }

  const Dims3& dims() const { return dims_; }
  std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t t, std::size_t i, std::size_t j) {
    return values_[(t * dims_[1] + i) * dims_[2] + j];
  }
  double operator()(std::size_t t, std::size_t i, std::size_t j) const {
    return values_[(t * dims_[1] + i) * dims_[2] + j];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  /// Frames flattened into a nt x (nlat * nlon) matrix; rows are time steps.
  Matrix frames() const {
    Matrix m(dims_[0], dims_[1] * dims_[2]);
    std::copy(values_.begin(), values_.end(), m.data());
    return m;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  bool operator==(const Tensor3& other) const = default;

 private:
  static void check_dims(const Dims3& dims) {
    for (std::size_t d : dims) {
      if (d == 0) throw DimensionError("Tensor3: dims must be positive");
    }
  }

  Dims3 dims_{0, 0, 0};
  std::vector<double> values_;
};

namespace detail {

// The two modes other than `mode`, in their original order.
inline std::array<std::size_t, 2> other_modes(std::size_t mode) {
  switch (mode) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

inline void check_mode(std::size_t mode) {
  if (mode > 2) throw DimensionError("mode must be 0, 1 or 2");
}

}  // namespace detail

/// Mode-n matricization. Row index is the mode index; the column index runs
/// over the remaining two modes in their original order, the earlier one slower.
inline Matrix unfold(const Tensor3& t, std::size_t mode) {
  detail::check_mode(mode);
  const auto [a, b] = detail::other_modes(mode);
  const Dims3& d = t.dims();
  Matrix m(d[mode], d[a] * d[b]);
  std::array<std::size_t, 3> idx{};
  for (idx[0] = 0; idx[0] < d[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < d[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < d[2]; ++idx[2]) {
        m(idx[mode], idx[a] * d[b] + idx[b]) = t(idx[0], idx[1], idx[2]);
      }
    }
  }
  return m;
}

/// Inverse of unfold for a tensor of the given dims.
inline Tensor3 fold(const Matrix& m, std::size_t mode, const Dims3& dims) {
  detail::check_mode(mode);
  const auto [a, b] = detail::other_modes(mode);
  if (static_cast<std::size_t>(m.rows()) != dims[mode] ||
      static_cast<std::size_t>(m.cols()) != dims[a] * dims[b]) {
    throw DimensionError("fold: matrix shape does not match dims");
  }
  Tensor3 t(dims);
  std::array<std::size_t, 3> idx{};
  for (idx[0] = 0; idx[0] < dims[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < dims[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < dims[2]; ++idx[2]) {
        t(idx[0], idx[1], idx[2]) = m(idx[mode], idx[a] * dims[b] + idx[b]);
      }
    }
  }
  return t;
}

/// n-mode product t x_mode m: contracts dimension `mode` of t with the columns of m.
inline Tensor3 mode_product(const Tensor3& t, const Matrix& m, std::size_t mode) {
  detail::check_mode(mode);
  if (static_cast<std::size_t>(m.cols()) != t.dim(mode)) {
    throw DimensionError("mode_product: matrix columns do not match tensor mode size");
  }
  Dims3 out = t.dims();
  out[mode] = static_cast<std::size_t>(m.rows());
  const Matrix product = m * unfold(t, mode);
  return fold(product, mode, out);
}

struct Svd {
  Matrix u;   // rows x p, orthonormal columns
  Vector s;   // p = min(rows, cols), descending, nonnegative
  Matrix vt;  // p x cols, orthonormal rows
};

/// Thin singular value decomposition.
inline Svd svd(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw DimensionError("svd: empty matrix");
  require_finite(m, "svd");
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out;
  out.u = solver.matrixU();
  out.s = solver.singularValues();
  out.vt = solver.matrixV().transpose();
  return out;
}

/// Pearson correlation coefficient. Throws DegenerateError when either input
/// has zero variance rather than returning a made-up value.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) throw ArgumentError("pearson: need at least two samples");
  require_finite(x, "pearson");
  require_finite(y, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DegenerateError("pearson: zero-variance input, correlation undefined");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double pearson(const Vector& x, const Vector& y) {
  return pearson(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                 std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

}  // namespace latentscope
