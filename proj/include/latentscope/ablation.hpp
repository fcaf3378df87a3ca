#pragma once

// Per-dimension latent ablation: squared-error tensors, temporal/spatial error
// decomposition, attribution map, and a spatial-coherence statistic.

#include <cstdint>
#include <string>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/mmgn.hpp"
#include "latentscope/parallel.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

enum class AblationFill { Zero, Mean };

inline const char* to_string(AblationFill f) { return f == AblationFill::Zero ? "zero" : "mean"; }

inline Tensor3 squared_error(const Tensor3& estimate, const Tensor3& truth) {
  if (estimate.dims() != truth.dims()) throw DimensionError("squared_error: dims mismatch");
  Tensor3 out(truth.dims());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = estimate.values()[i] - truth.values()[i];
    out.values()[i] = d * d;
  }
  return out;
}

inline double mean_value(const Tensor3& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.size());
}

inline Matrix ablated_latents(const Matrix& latents, std::size_t dim, AblationFill fill = AblationFill::Zero) {
  if (dim >= static_cast<std::size_t>(latents.cols())) {
    throw ArgumentError("ablate: dimension " + std::to_string(dim) + " out of range for k = " +
                        std::to_string(latents.cols()));
  }
  Matrix z = latents;
  const auto c = static_cast<Eigen::Index>(dim);
  z.col(c).setConstant(fill == AblationFill::Zero ? 0.0 : latents.col(c).mean());
  return z;
}

/// Squared error per (t, lat, lon) after replacing latent column `dim`.
inline Tensor3 ablate_dimension(const GridEvaluator& eval, const Matrix& latents, std::size_t dim,
                                const Tensor3& truth, AblationFill fill = AblationFill::Zero) {
  return squared_error(eval.evaluate(ablated_latents(latents, dim, fill)), truth);
}

inline Tensor3 ablate_dimension(const MmgnModel& model, const Matrix& latents, std::size_t dim, const Tensor3& truth,
                                AblationFill fill = AblationFill::Zero) {
  return ablate_dimension(GridEvaluator(model, truth.dim(1), truth.dim(2)), latents, dim, truth, fill);
}

struct ErrorSplit {
  std::vector<double> e_t;  // mean over the grid, per time step
  Matrix e_x;               // nlat x nlon, mean over time
};

inline ErrorSplit error_decompose(const Tensor3& err) {
  const auto [nt, nlat, nlon] = err.dims();
  if (err.size() == 0) throw ArgumentError("error_decompose: empty tensor");
  ErrorSplit s;
  s.e_t.assign(nt, 0.0);
  s.e_x = Matrix::Zero(static_cast<Eigen::Index>(nlat), static_cast<Eigen::Index>(nlon));
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t i = 0; i < nlat; ++i) {
      for (std::size_t j = 0; j < nlon; ++j) {
        const double v = err(t, i, j);
        s.e_t[t] += v;
        s.e_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v;
      }
    }
  }
  for (double& v : s.e_t) v /= static_cast<double>(nlat * nlon);
  s.e_x /= static_cast<double>(nt);
  return s;
}

struct DimAblation {
  std::size_t dim = 0;
  double total_mse = 0.0;
  ErrorSplit split;
};

struct AblationResult {
  Tensor3 baseline;  // squared error with unmodified latents
  double baseline_mse = 0.0;
  std::vector<DimAblation> per_dim;
};

inline AblationResult run_ablation(const MmgnModel& model, const Matrix& latents, const Tensor3& truth,
                                   AblationFill fill = AblationFill::Zero) {
  if (static_cast<std::size_t>(latents.rows()) != truth.dim(0)) {
    throw DimensionError("run_ablation: latent rows do not match truth time steps");
  }
  const GridEvaluator eval(model, truth.dim(1), truth.dim(2));
  AblationResult r;
  r.baseline = squared_error(eval.evaluate(latents), truth);
  r.baseline_mse = mean_value(r.baseline);
  const auto k = static_cast<std::size_t>(latents.cols());
  r.per_dim.resize(k);
  parallel_for(k, [&](std::size_t d) {
    const Tensor3 err = ablate_dimension(eval, latents, d, truth, fill);
    r.per_dim[d] = {d, mean_value(err), error_decompose(err)};
  });
  return r;
}

struct AttributionMap {
  std::size_t nlat = 0, nlon = 0;
  std::vector<std::uint32_t> labels;  // row-major (lat, lon)
  std::uint32_t operator()(std::size_t i, std::size_t j) const { return labels[i * nlon + j]; }
};

/// Pointwise argmax over the per-dimension spatial error maps; ties go to the
/// lowest dimension index.
inline AttributionMap attribution_map(const AblationResult& r) {
  if (r.per_dim.empty()) throw ArgumentError("attribution_map: no ablated dimensions");
  const Matrix& first = r.per_dim.front().split.e_x;
  AttributionMap m;
  m.nlat = static_cast<std::size_t>(first.rows());
  m.nlon = static_cast<std::size_t>(first.cols());
  m.labels.assign(m.nlat * m.nlon, 0);
  for (std::size_t i = 0; i < m.nlat; ++i) {
    for (std::size_t j = 0; j < m.nlon; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      double best = r.per_dim[0].split.e_x(ii, jj);
      for (std::size_t d = 1; d < r.per_dim.size(); ++d) {
        const double v = r.per_dim[d].split.e_x(ii, jj);
        if (v > best) {
          best = v;
          m.labels[i * m.nlon + j] = static_cast<std::uint32_t>(d);
        }
      }
    }
  }
  return m;
}

inline AttributionMap attribution_map(const MmgnModel& model, const Matrix& latents, const Tensor3& truth) {
  return attribution_map(run_ablation(model, latents, truth));
}

/// Fraction of 4-neighbour pairs (no wraparound) that share a label.
inline double same_label_fraction(std::span<const std::uint32_t> labels, std::size_t nlat, std::size_t nlon) {
  if (labels.size() != nlat * nlon) throw DimensionError("same_label_fraction: label count mismatch");
  std::size_t same = 0, pairs = 0;
  for (std::size_t i = 0; i < nlat; ++i) {
    for (std::size_t j = 0; j < nlon; ++j) {
      const std::uint32_t v = labels[i * nlon + j];
      if (j + 1 < nlon) {
        ++pairs;
        same += labels[i * nlon + j + 1] == v;
      }
      if (i + 1 < nlat) {
        ++pairs;
        same += labels[(i + 1) * nlon + j] == v;
      }
    }
  }
  if (pairs == 0) throw ArgumentError("same_label_fraction: grid has no neighbour pairs");
  return static_cast<double>(same) / static_cast<double>(pairs);
}

struct Coherence {
  double observed = 0.0;
  std::vector<double> permuted;
  double permuted_mean = 0.0;
};

inline Coherence spatial_coherence(const AttributionMap& m, std::size_t permutations = 100, std::uint64_t seed = 0) {
  Coherence c;
  c.observed = same_label_fraction(m.labels, m.nlat, m.nlon);
  SplitMix64 rng(seed);
  std::vector<std::uint32_t> shuffled = m.labels;
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(std::span<std::uint32_t>(shuffled));
    c.permuted.push_back(same_label_fraction(shuffled, m.nlat, m.nlon));
  }
  double s = 0.0;
  for (double v : c.permuted) s += v;
  c.permuted_mean = permutations ? s / static_cast<double>(permutations) : 0.0;
  return c;
}

}  // namespace latentscope
