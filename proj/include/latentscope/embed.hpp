#pragma once

// Embedding-and-clustering analysis of latent matrices: exact t-SNE,
// k-means++ / Lloyd clustering, and per-cluster spread across latent spaces.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/parallel.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

inline Matrix squared_distances(const Matrix& m) {
  const Eigen::Index n = m.rows();
  const Vector norms = m.rowwise().squaredNorm();
  Matrix d = -2.0 * m * m.transpose();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = std::max(d(i, j), 0.0);
  }
  return d;
}

struct Affinities {
  Matrix joint;              // symmetric, zero diagonal, sums to 1
  Matrix conditional;        // row i is P(j | i)
  Vector perplexities;       // calibrated perplexity per point
};

/// Row-wise conditional affinities with the Gaussian bandwidth binary-searched
/// so that exp(H(P_i)) matches `perplexity`, then symmetrized joint P.
inline Affinities joint_probabilities(const Matrix& data, double perplexity) {
  const Eigen::Index n = data.rows();
  if (n < 2) throw ArgumentError("joint_probabilities: need at least two points");
  if (!(perplexity > 0.0) || perplexity > static_cast<double>(n - 1)) {
    throw ArgumentError("joint_probabilities: perplexity must be in (0, n - 1]");
  }
  require_finite(data, "joint_probabilities");
  const Matrix dist = squared_distances(data);
  const double target = std::log(perplexity);
  Affinities a;
  a.conditional = Matrix::Zero(n, n);
  a.perplexities.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    // Shift by the nearest-neighbour distance; P_i is invariant to it and it
    // keeps exp() away from underflow for widely spread data.
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, dist(i, j));
    }
    auto entropy_at = [&](double beta, Vector& row) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (dist(i, j) - dmin));
        sum += row(j);
      }
      double h = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) /= sum;
        if (row(j) > 0.0) h -= row(j) * std::log(row(j));
      }
      return h;
    };
    Vector row(n);
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), beta = 1.0;
    double h = entropy_at(beta, row);
    for (int it = 0; it < 500; ++it) {
      if (std::abs(std::exp(h) - perplexity) < 1e-7) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = entropy_at(beta, row);
    }
    a.conditional.row(i) = row.transpose();
    a.perplexities(i) = std::exp(h);
  }
  a.joint = (a.conditional + a.conditional.transpose()) / (2.0 * static_cast<double>(n));
  return a;
}

struct TsneConfig {
  double perplexity = 10.0;
  std::size_t iterations = 1000;
  double exaggeration = 4.0;
  std::size_t exaggeration_iters = 100;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
};

struct Embedding2D {
  Matrix points;  // T x 2
  std::size_t source_dim = 0;
  double perplexity = 0.0;
  std::uint64_t seed = 0;
  double kl_divergence = 0.0;
  Vector calibrated_perplexities;
};

/// Exact O(T^2) t-SNE with momentum, gains, and early exaggeration.
inline Embedding2D tsne(const Matrix& data, const TsneConfig& cfg) {
  const Eigen::Index n = data.rows();
  if (n < 4) throw ArgumentError("tsne: need at least 4 rows");
  if (!(cfg.perplexity > 0.0) || !(cfg.perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw ArgumentError("tsne: perplexity infeasible for row count (need perplexity < (rows - 1) / 3)");
  }
  const Affinities aff = joint_probabilities(data, cfg.perplexity);
  const Matrix& p = aff.joint;

  SplitMix64 rng(cfg.seed);
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 1e-4 * rng.normal();
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n);
  Matrix grad(n, 2);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double num_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double d = (y.row(i) - y.row(j)).squaredNorm();
        const double v = 1.0 / (1.0 + d);
        num(i, j) = num(j, i) = v;
        num_sum += 2.0 * v;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double mult = (exag * p(i, j) - num(i, j) / num_sum) * num(i, j);
        gx += mult * (y(i, 0) - y(j, 0));
        gy += mult * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double& g = gains.data()[i];
      const bool same_sign = (grad.data()[i] > 0.0) == (update.data()[i] > 0.0);
      g = same_sign ? g * 0.8 : g + 0.2;
      g = std::max(g, 0.01);
      update.data()[i] = momentum * update.data()[i] - cfg.learning_rate * g * grad.data()[i];
      y.data()[i] += update.data()[i];
    }
    y.rowwise() -= y.colwise().mean();
  }

  double num_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) num_sum += 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
    }
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm()) / num_sum;
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }

  Embedding2D e;
  e.points = std::move(y);
  e.source_dim = static_cast<std::size_t>(data.cols());
  e.perplexity = cfg.perplexity;
  e.seed = cfg.seed;
  e.kl_divergence = kl;
  e.calibrated_perplexities = aff.perplexities;
  return e;
}

struct ClusterStats {
  std::vector<std::size_t> labels;  // per point
  std::vector<std::size_t> sizes;   // per cluster
  Matrix centroids;                 // k x d
  std::vector<double> sigmas;       // RMS distance of members to their centroid
  double inertia = 0.0;             // sum of squared distances to assigned centroid
  std::vector<double> inertia_history;  // after each Lloyd update, best restart
};

struct KMeansConfig {
  std::size_t clusters = 6;
  std::size_t restarts = 8;
  std::size_t max_iters = 300;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::size_t nearest(const Matrix& centroids, const Matrix& points, Eigen::Index i, double* dist2) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (points.row(i) - centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

inline Matrix kmeanspp_init(const Matrix& points, std::size_t k, SplitMix64& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, (points.row(i) - centroids.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
      total += d;
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(pick);
  }
  return centroids;
}

inline ClusterStats lloyd(const Matrix& points, Matrix centroids, std::size_t max_iters) {
  const Eigen::Index n = points.rows();
  const auto k = static_cast<std::size_t>(centroids.rows());
  ClusterStats s;
  s.labels.assign(static_cast<std::size_t>(n), k);  // k = unassigned
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t c = nearest(centroids, points, i, nullptr);
      if (c != s.labels[static_cast<std::size_t>(i)]) {
        s.labels[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(i)])) += points.row(i);
      ++counts[s.labels[static_cast<std::size_t>(i)]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      } else {
        // Empty cluster: move it onto the point worst served by its centroid.
        Eigen::Index worst = 0;
        double worst_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = (points.row(i) - centroids.row(static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(i)]))).squaredNorm();
          if (d > worst_d) {
            worst_d = d;
            worst = i;
          }
        }
        centroids.row(static_cast<Eigen::Index>(c)) = points.row(worst);
      }
    }
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      inertia += (points.row(i) - centroids.row(static_cast<Eigen::Index>(s.labels[static_cast<std::size_t>(i)]))).squaredNorm();
    }
    s.inertia_history.push_back(inertia);
  }
  // Final assignment against the converged centroids.
  for (Eigen::Index i = 0; i < n; ++i) s.labels[static_cast<std::size_t>(i)] = nearest(centroids, points, i, nullptr);
  s.centroids = std::move(centroids);
  return s;
}

inline void finalize_stats(const Matrix& points, ClusterStats& s) {
  const auto k = static_cast<std::size_t>(s.centroids.rows());
  s.sizes.assign(k, 0);
  std::vector<double> sq(k, 0.0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const std::size_t c = s.labels[static_cast<std::size_t>(i)];
    ++s.sizes[c];
    sq[c] += (points.row(i) - s.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
  }
  s.sigmas.assign(k, 0.0);
  s.inertia = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    s.inertia += sq[c];
    if (s.sizes[c] > 0) s.sigmas[c] = std::sqrt(sq[c] / static_cast<double>(s.sizes[c]));
  }
}

}  // namespace detail

/// k-means++ seeding, Lloyd iterations to convergence, best of `restarts` by inertia.
inline ClusterStats kmeans(const Matrix& points, const KMeansConfig& cfg) {
  if (cfg.clusters == 0) throw ArgumentError("kmeans: k must be positive");
  if (cfg.clusters > static_cast<std::size_t>(points.rows())) throw ArgumentError("kmeans: k exceeds point count");
  require_finite(points, "kmeans");
  SplitMix64 root(cfg.seed);
  std::optional<ClusterStats> best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
    SplitMix64 rng = root.fork(r);
    ClusterStats s = detail::lloyd(points, detail::kmeanspp_init(points, cfg.clusters, rng), cfg.max_iters);
    detail::finalize_stats(points, s);
    if (!best || s.inertia < best->inertia) best = std::move(s);
  }
  return *best;
}

struct SpreadConfig {
  std::size_t clusters = 6;
  std::size_t restarts = 8;
  TsneConfig tsne;
  bool cluster_raw = false;  // cluster the latents themselves instead of the embedding
};

struct LatentSpace {
  std::size_t latent_dim = 0;
  Matrix latents;
};

struct SpreadRow {
  std::optional<std::size_t> latent_dim;  // empty for the original data
  Embedding2D embedding;
  ClusterStats clusters;

  std::string label() const { return latent_dim ? std::to_string(*latent_dim) : "original"; }
};

/// t-SNE then k-means for every latent space (ascending latent size) and for
/// the frame-flattened original data, which comes last.
inline std::vector<SpreadRow> spread_sweep(std::vector<LatentSpace> spaces, const Matrix& original,
                                           const SpreadConfig& cfg) {
  if (spaces.size() < 2) throw ArgumentError("spread_sweep: need at least two latent spaces");
  std::stable_sort(spaces.begin(), spaces.end(),
                   [](const LatentSpace& a, const LatentSpace& b) { return a.latent_dim < b.latent_dim; });
  std::vector<SpreadRow> rows(spaces.size() + 1);
  parallel_for(rows.size(), [&](std::size_t s) {
    const Matrix& data = s < spaces.size() ? spaces[s].latents : original;
    SpreadRow& row = rows[s];
    if (s < spaces.size()) row.latent_dim = spaces[s].latent_dim;
    row.embedding = tsne(data, cfg.tsne);
    KMeansConfig kc{cfg.clusters, cfg.restarts, 300, cfg.tsne.seed};
    row.clusters = kmeans(cfg.cluster_raw ? data : row.embedding.points, kc);
  });
  return rows;
}

}  // namespace latentscope
