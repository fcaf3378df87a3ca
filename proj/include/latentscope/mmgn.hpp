#pragma once

// MMGN: a latent table (auto-decoder) plus a Gabor multiplicative filter
// network decoder.
//
//   h_1     = g_1(x) * (1 + A_1 z)
//   h_{i+1} = (W_i h_i + b_i) * g_{i+1}(x) * (1 + A_{i+1} z)
//   u       = w_out . h_L + b_out
//
// g_i(x)_j = exp(-gamma_j / 2 * |x - mu_j|^2) * sin(omega_j . x + phi_j)
//
// z = 0 makes every modulation factor one, which recovers the plain MFN.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <sstream>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/field.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

using Point2 = std::array<double, 2>;

struct GaborLayer {
  Matrix mu;     // h x 2 centres
  Vector gamma;  // h envelope scales, >= 0
  Matrix omega;  // h x 2 frequencies
  Vector phase;  // h

  std::size_t width() const { return static_cast<std::size_t>(gamma.size()); }
};

struct MmgnArch {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  std::size_t latent_dim = 16;
  double input_scale = 8.0;   // frequency stddev before dividing by sqrt(layers)
  double gamma_scale = 2.0;   // half-normal scale of the envelope parameter
  double weight_scale = 1.0;

  void validate() const {
    if (layers < 1) throw ArgumentError("MmgnArch: need at least one layer");
    if (hidden < 1) throw ArgumentError("MmgnArch: hidden width must be positive");
    if (latent_dim < 1) throw ArgumentError("MmgnArch: latent dim must be positive");
  }

  bool operator==(const MmgnArch&) const = default;
};

struct MmgnModel {
  MmgnArch arch;
  std::uint64_t seed = 0;
  std::vector<GaborLayer> gabor;  // L
  std::vector<Matrix> linear;     // L - 1, each h x h
  std::vector<Vector> bias;       // L - 1, each h
  std::vector<Matrix> modulation; // L, each h x k
  Vector w_out;                   // h
  double b_out = 0.0;

  std::size_t hidden() const { return arch.hidden; }
  std::size_t latent_dim() const { return arch.latent_dim; }

  /// Every trainable array in declaration order (also the model-file payload order).
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (auto& g : gabor) {
      fn(span_of(g.mu));
      fn(span_of(g.gamma));
      fn(span_of(g.omega));
      fn(span_of(g.phase));
    }
    for (std::size_t i = 0; i < linear.size(); ++i) {
      fn(span_of(linear[i]));
      fn(span_of(bias[i]));
    }
    for (auto& a : modulation) fn(span_of(a));
    fn(span_of(w_out));
    fn(std::span<double>(&b_out, 1));
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<MmgnModel*>(this)->for_each_block(
        [&](std::span<double> s) { fn(std::span<const double>(s.data(), s.size())); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_block([&](std::span<const double> s) { n += s.size(); });
    return n;
  }

  /// Zero-valued model of the same shape; used as a gradient accumulator.
  MmgnModel zeros_like() const {
    MmgnModel z = *this;
    z.for_each_block([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
  }

  void validate() const {
    arch.validate();
    const auto h = static_cast<Eigen::Index>(arch.hidden);
    const auto k = static_cast<Eigen::Index>(arch.latent_dim);
    const std::size_t L = arch.layers;
    if (gabor.size() != L || linear.size() != L - 1 || bias.size() != L - 1 || modulation.size() != L) {
      throw DimensionError("MmgnModel: layer count mismatch");
    }
    for (const auto& g : gabor) {
      if (g.mu.rows() != h || g.mu.cols() != 2 || g.gamma.size() != h || g.omega.rows() != h ||
          g.omega.cols() != 2 || g.phase.size() != h) {
        throw DimensionError("MmgnModel: Gabor layer shape mismatch");
      }
      if ((g.gamma.array() < 0.0).any()) throw ArgumentError("MmgnModel: negative Gabor scale");
    }
    for (std::size_t i = 0; i + 1 < L; ++i) {
      if (linear[i].rows() != h || linear[i].cols() != h || bias[i].size() != h) {
        throw DimensionError("MmgnModel: linear layer shape mismatch");
      }
    }
    for (const auto& a : modulation) {
      if (a.rows() != h || a.cols() != k) throw DimensionError("MmgnModel: modulation shape mismatch");
    }
    if (w_out.size() != h) throw DimensionError("MmgnModel: output head shape mismatch");
    for_each_block([](std::span<const double> s) { require_finite(s, "MmgnModel"); });
  }

 private:
  template <typename Derived>
  static std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
};

/// Random initialization: mu uniform in [-1,1]^2, gamma half-normal, omega
/// normal with stddev input_scale / sqrt(L), phase uniform in [0, 2pi),
/// linear weights uniform in +-sqrt(weight_scale / h).
inline MmgnModel init_model(const MmgnArch& arch, std::uint64_t seed) {
  arch.validate();
  const auto h = static_cast<Eigen::Index>(arch.hidden);
  const auto k = static_cast<Eigen::Index>(arch.latent_dim);
  const std::size_t L = arch.layers;
  SplitMix64 rng(seed);
  MmgnModel m;
  m.arch = arch;
  m.seed = seed;

  const double omega_std = arch.input_scale / std::sqrt(static_cast<double>(L));
  for (std::size_t l = 0; l < L; ++l) {
    GaborLayer g;
    g.mu.resize(h, 2);
    g.gamma.resize(h);
    g.omega.resize(h, 2);
    g.phase.resize(h);
    for (Eigen::Index j = 0; j < h; ++j) {
      g.mu(j, 0) = rng.uniform(-1.0, 1.0);
      g.mu(j, 1) = rng.uniform(-1.0, 1.0);
      g.gamma(j) = std::abs(rng.normal()) * arch.gamma_scale;
      g.omega(j, 0) = rng.normal() * omega_std;
      g.omega(j, 1) = rng.normal() * omega_std;
      g.phase(j) = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    m.gabor.push_back(std::move(g));
  }
  const double w_bound = std::sqrt(arch.weight_scale / static_cast<double>(h));
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix w(h, h);
    Vector b(h);
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < h; ++c) w(r, c) = rng.uniform(-w_bound, w_bound);
    }
    for (Eigen::Index r = 0; r < h; ++r) b(r) = rng.uniform(-w_bound, w_bound);
    m.linear.push_back(std::move(w));
    m.bias.push_back(std::move(b));
  }
  const double a_bound = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t l = 0; l < L; ++l) {
    Matrix a(h, k);
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < k; ++c) a(r, c) = rng.uniform(-a_bound, a_bound);
    }
    m.modulation.push_back(std::move(a));
  }
  m.w_out.resize(h);
  for (Eigen::Index r = 0; r < h; ++r) m.w_out(r) = rng.uniform(-w_bound, w_bound);
  m.b_out = 0.0;
  return m;
}

/// One Gabor layer evaluated at a single point.
inline Vector gabor_filter(const Point2& x, const GaborLayer& p) {
  if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw NonFiniteError("gabor_filter: non-finite coordinate");
  const Eigen::Index h = p.gamma.size();
  Vector out(h);
  for (Eigen::Index j = 0; j < h; ++j) {
    const double d0 = x[0] - p.mu(j, 0);
    const double d1 = x[1] - p.mu(j, 1);
    const double envelope = std::exp(-0.5 * p.gamma(j) * (d0 * d0 + d1 * d1));
    out(j) = envelope * std::sin(p.omega(j, 0) * x[0] + p.omega(j, 1) * x[1] + p.phase(j));
  }
  return out;
}

/// Pointwise decoder D(x, z). Plain loops; the batched path below is checked
/// against this one.
inline double decoder_forward(const MmgnModel& model, const Point2& x, std::span<const double> z) {
  const std::size_t h = model.hidden();
  const std::size_t k = model.latent_dim();
  if (z.size() != k) throw DimensionError("decoder_forward: latent size mismatch");
  auto modulation = [&](std::size_t layer) {
    Vector m(h);
    for (std::size_t r = 0; r < h; ++r) {
      double s = 1.0;
      for (std::size_t c = 0; c < k; ++c) s += model.modulation[layer](r, c) * z[c];
      m(r) = s;
    }
    return m;
  };
  Vector hidden = gabor_filter(x, model.gabor[0]).cwiseProduct(modulation(0));
  for (std::size_t l = 1; l < model.arch.layers; ++l) {
    Vector pre(h);
    for (std::size_t r = 0; r < h; ++r) {
      double s = model.bias[l - 1](r);
      for (std::size_t c = 0; c < h; ++c) s += model.linear[l - 1](r, c) * hidden(c);
      pre(r) = s;
    }
    hidden = pre.cwiseProduct(gabor_filter(x, model.gabor[l])).cwiseProduct(modulation(l));
  }
  double u = model.b_out;
  for (std::size_t r = 0; r < h; ++r) u += model.w_out(r) * hidden(r);
  return u;
}

inline Point2 grid_point(std::size_t i, std::size_t j, std::size_t nlat, std::size_t nlon) {
  return {grid_coord(i, nlat), grid_coord(j, nlon)};
}

/// Grid-aligned sample locations. Every evaluation point of the batched
/// decoder lies on a lat/lon grid, which lets the Gabor features factor per axis.
struct SamplePoints {
  Vector lat_coord;                    // nlat
  Vector lon_coord;                    // nlon
  std::vector<std::uint32_t> lat_idx;  // N
  std::vector<std::uint32_t> lon_idx;  // N
  Eigen::MatrixXd coords;              // N x 2, (lat, lon)

  std::size_t size() const { return lat_idx.size(); }

  SamplePoints(std::size_t nlat, std::size_t nlon) : lat_coord(static_cast<Eigen::Index>(nlat)),
                                                     lon_coord(static_cast<Eigen::Index>(nlon)) {
    for (std::size_t i = 0; i < nlat; ++i) lat_coord(static_cast<Eigen::Index>(i)) = grid_coord(i, nlat);
    for (std::size_t j = 0; j < nlon; ++j) lon_coord(static_cast<Eigen::Index>(j)) = grid_coord(j, nlon);
  }

  void reserve(std::size_t n) {
    lat_idx.reserve(n);
    lon_idx.reserve(n);
  }

  void push(std::size_t i, std::size_t j) {
    lat_idx.push_back(static_cast<std::uint32_t>(i));
    lon_idx.push_back(static_cast<std::uint32_t>(j));
  }

  void finalize() {
    coords.resize(static_cast<Eigen::Index>(size()), 2);
    for (std::size_t n = 0; n < size(); ++n) {
      coords(static_cast<Eigen::Index>(n), 0) = lat_coord(lat_idx[n]);
      coords(static_cast<Eigen::Index>(n), 1) = lon_coord(lon_idx[n]);
    }
  }

  static SamplePoints full_grid(std::size_t nlat, std::size_t nlon) {
    SamplePoints s(nlat, nlon);
    s.reserve(nlat * nlon);
    for (std::size_t i = 0; i < nlat; ++i) {
      for (std::size_t j = 0; j < nlon; ++j) s.push(i, j);
    }
    s.finalize();
    return s;
  }
};

/// Training batch: observation locations, their frame index, and targets.
struct Batch {
  SamplePoints points{1, 1};
  std::vector<std::size_t> frame;  // N
  Vector target;                   // N
  std::size_t frames = 0;

  std::size_t size() const { return frame.size(); }
};

inline SamplePoints frame_points(std::span<const Observation> frame, const Dims3& dims) {
  SamplePoints pts(dims[1], dims[2]);
  pts.reserve(frame.size());
  for (const Observation& o : frame) pts.push(o.lat, o.lon);
  pts.finalize();
  return pts;
}

inline Batch make_batch(const ObservationSet& obs) {
  const std::size_t n = obs.total();
  if (n == 0) throw ArgumentError("empty observation set");
  Batch b;
  b.points = SamplePoints(obs.dims[1], obs.dims[2]);
  b.points.reserve(n);
  b.target.resize(static_cast<Eigen::Index>(n));
  b.frame.reserve(n);
  b.frames = obs.frames.size();
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < obs.frames.size(); ++t) {
    for (const Observation& o : obs.frames[t]) {
      b.points.push(o.lat, o.lon);
      b.target(row++) = o.value;
      b.frame.push_back(t);
    }
  }
  b.points.finalize();
  return b;
}

namespace detail {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;  // N x h

struct GaborCache {
  Array dist2, envelope, sine, cosine, value;
};

// Per-axis tables (rows = axis positions, cols = units) combined per sample:
// sin(a + b) = sin a cos b + cos a sin b and exp(-g/2 (dx^2 + dy^2)) factors.
inline void gabor_batch(const SamplePoints& pts, const GaborLayer& p, bool keep_parts, GaborCache& c) {
  const Eigen::Index h = p.gamma.size();
  auto axis_tables = [&](const Vector& coord, int axis, bool with_phase) {
    Array arg = coord * p.omega.col(axis).transpose();
    if (with_phase) arg.rowwise() += p.phase.transpose().array();
    Array d2 = (coord.replicate(1, h).rowwise() - p.mu.col(axis).transpose()).array().square();
    Array scaled = d2;
    scaled.rowwise() *= (-0.5 * p.gamma.transpose().array());
    return std::array<Array, 4>{arg.sin(), arg.cos(), scaled.exp(), d2};
  };
  const auto lat = axis_tables(pts.lat_coord, 0, true);
  const auto lon = axis_tables(pts.lon_coord, 1, false);

  const auto n = static_cast<Eigen::Index>(pts.size());
  c.value.resize(n, h);
  if (keep_parts) {
    c.dist2.resize(n, h);
    c.envelope.resize(n, h);
    c.sine.resize(n, h);
    c.cosine.resize(n, h);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index i = pts.lat_idx[static_cast<std::size_t>(r)];
    const Eigen::Index j = pts.lon_idx[static_cast<std::size_t>(r)];
    const auto sin_a = lat[0].row(i), cos_a = lat[1].row(i), env_a = lat[2].row(i);
    const auto sin_b = lon[0].row(j), cos_b = lon[1].row(j), env_b = lon[2].row(j);
    if (keep_parts) {
      c.sine.row(r) = sin_a * cos_b + cos_a * sin_b;
      c.cosine.row(r) = cos_a * cos_b - sin_a * sin_b;
      c.envelope.row(r) = env_a * env_b;
      c.dist2.row(r) = lat[3].row(i) + lon[3].row(j);
      c.value.row(r) = c.envelope.row(r) * c.sine.row(r);
    } else {
      c.value.row(r) = (env_a * env_b) * (sin_a * cos_b + cos_a * sin_b);
    }
  }
}

inline Array gabor_values(const SamplePoints& pts, const GaborLayer& p) {
  GaborCache c;
  gabor_batch(pts, p, false, c);
  return std::move(c.value);
}

// Buffers for one batched forward/backward pass. Reused across epochs so the
// hot loop does not allocate.
struct Workspace {
  std::vector<GaborCache> gabor;
  std::vector<Array> modulation;  // 1 + Z A^T
  std::vector<Array> pre;         // W h + b, slot l for layer l >= 1
  std::vector<Array> hidden;
  Vector output;
  Matrix z_rows;  // N x k
  Matrix dz;      // N x k
  Array d_hidden, d_gabor, d_mod, d_pre, d_arg, q;
};

inline void forward_batch(const MmgnModel& model, const SamplePoints& pts, const Matrix& z_rows,
                          bool keep_parts, Workspace& w) {
  const std::size_t L = model.arch.layers;
  const auto n = static_cast<Eigen::Index>(pts.size());
  const auto h = static_cast<Eigen::Index>(model.hidden());
  w.gabor.resize(L);
  w.modulation.resize(L);
  w.pre.resize(L);
  w.hidden.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    gabor_batch(pts, model.gabor[l], keep_parts, w.gabor[l]);
    Array& mod = w.modulation[l];
    mod.resize(n, h);
    mod.matrix().noalias() = z_rows * model.modulation[l].transpose();
    mod += 1.0;
    Array& hid = w.hidden[l];
    if (l == 0) {
      hid = w.gabor[0].value * mod;
    } else {
      Array& pre = w.pre[l];
      pre.resize(n, h);
      pre.matrix().noalias() = w.hidden[l - 1].matrix() * model.linear[l - 1].transpose();
      pre.rowwise() += model.bias[l - 1].transpose().array();
      hid = pre * w.gabor[l].value * mod;
    }
  }
  w.output.resize(n);
  w.output.noalias() = w.hidden[L - 1].matrix() * model.w_out;
  w.output.array() += model.b_out;
}

inline void gabor_backward(const Eigen::MatrixXd& coords, const GaborLayer& p, const GaborCache& c,
                           const Array& d_value, Workspace& w, GaborLayer& grad) {
  w.d_arg = d_value * c.envelope * c.cosine;
  w.q = d_value * c.sine * c.envelope;  // dL/d(envelope) * envelope
  grad.omega.noalias() += w.d_arg.matrix().transpose() * coords;
  grad.phase += w.d_arg.colwise().sum().transpose().matrix();
  grad.gamma += (-0.5 * (w.q * c.dist2).colwise().sum()).transpose().matrix();
  const Eigen::VectorXd q_sum = w.q.colwise().sum().transpose().matrix();
  const Eigen::VectorXd qx = w.q.matrix().transpose() * coords.col(0);
  const Eigen::VectorXd qy = w.q.matrix().transpose() * coords.col(1);
  grad.mu.col(0) += p.gamma.cwiseProduct(qx - p.mu.col(0).cwiseProduct(q_sum));
  grad.mu.col(1) += p.gamma.cwiseProduct(qy - p.mu.col(1).cwiseProduct(q_sum));
}

// Backpropagates d_output (N) through the forward pass held in `w`.
// Accumulates parameter gradients into `grad` when non-null and leaves the
// per-row latent gradient (N x k) in w.dz.
inline void backward_batch(const MmgnModel& model, const SamplePoints& pts, const Matrix& z_rows,
                           const Vector& d_output, MmgnModel* grad, Workspace& w) {
  const std::size_t L = model.arch.layers;
  w.dz.setZero(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(model.latent_dim()));
  if (grad) {
    grad->w_out.noalias() += w.hidden[L - 1].matrix().transpose() * d_output;
    grad->b_out += d_output.sum();
  }
  w.d_hidden.resize(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(model.hidden()));
  w.d_hidden.matrix().noalias() = d_output * model.w_out.transpose();
  for (std::size_t l = L; l-- > 0;) {
    const Array& g = w.gabor[l].value;
    const Array& m = w.modulation[l];
    if (l == 0) {
      w.d_gabor = w.d_hidden * m;
      w.d_mod = w.d_hidden * g;
    } else {
      const Array& pre = w.pre[l];
      w.d_gabor = w.d_hidden * pre * m;
      w.d_mod = w.d_hidden * pre * g;
      w.d_pre = w.d_hidden * g * m;
      if (grad) {
        grad->linear[l - 1].noalias() += w.d_pre.matrix().transpose() * w.hidden[l - 1].matrix();
        grad->bias[l - 1] += w.d_pre.colwise().sum().transpose().matrix();
      }
      w.d_hidden.matrix().noalias() = w.d_pre.matrix() * model.linear[l - 1];
    }
    if (grad) {
      grad->modulation[l].noalias() += w.d_mod.matrix().transpose() * z_rows;
      gabor_backward(pts.coords, model.gabor[l], w.gabor[l], w.d_gabor, w, grad->gabor[l]);
    }
    w.dz.noalias() += w.d_mod.matrix() * model.modulation[l];
  }
}

inline void gather_rows(const Matrix& latents, const std::vector<std::size_t>& frame, Matrix& z) {
  z.resize(static_cast<Eigen::Index>(frame.size()), latents.cols());
  for (std::size_t n = 0; n < frame.size(); ++n) {
    z.row(static_cast<Eigen::Index>(n)) = latents.row(static_cast<Eigen::Index>(frame[n]));
  }
}

}  // namespace detail

/// Decoder outputs for every row of a batch.
inline Vector predict_batch(const MmgnModel& model, const Matrix& latents, const Batch& batch) {
  detail::Workspace w;
  detail::gather_rows(latents, batch.frame, w.z_rows);
  detail::forward_batch(model, batch.points, w.z_rows, false, w);
  return w.output;
}

struct LossTerms {
  double data = 0.0;            // (1/N) sum of squared residuals
  double regularization = 0.0;  // lambda * (1/T) sum |z_t|^2
  double total() const { return data + regularization; }
};

/// Auto-decoder objective and its gradient with respect to the decoder
/// parameters and every latent row. `workspace` may be passed to reuse buffers.
inline LossTerms loss_and_gradient(const MmgnModel& model, const Matrix& latents, const Batch& batch,
                                   double lambda, MmgnModel* grad_model, Matrix* grad_latents,
                                   detail::Workspace* workspace = nullptr) {
  if (static_cast<std::size_t>(latents.rows()) != batch.frames ||
      static_cast<std::size_t>(latents.cols()) != model.latent_dim()) {
    throw DimensionError("loss: latent table shape mismatch");
  }
  detail::Workspace local;
  detail::Workspace& w = workspace ? *workspace : local;
  detail::gather_rows(latents, batch.frame, w.z_rows);
  const bool need_grad = grad_model || grad_latents;
  detail::forward_batch(model, batch.points, w.z_rows, need_grad, w);
  const Vector residual = w.output - batch.target;
  const double n = static_cast<double>(batch.size());
  const double frames = static_cast<double>(batch.frames);
  LossTerms loss;
  loss.data = residual.squaredNorm() / n;
  loss.regularization = lambda * latents.squaredNorm() / frames;
  if (!need_grad) return loss;

  const Vector d_output = (2.0 / n) * residual;
  detail::backward_batch(model, batch.points, w.z_rows, d_output, grad_model, w);
  if (grad_latents) {
    *grad_latents = (2.0 * lambda / frames) * latents;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      grad_latents->row(static_cast<Eigen::Index>(batch.frame[r])) += w.dz.row(static_cast<Eigen::Index>(r));
    }
  }
  return loss;
}

struct TrainConfig {
  std::size_t epochs = 2000;
  double learning_rate = 2e-3;
  double latent_learning_rate = 1e-2;
  double final_lr_fraction = 0.05;  // cosine decay floor, relative to the start value
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda = 1e-4;
  double latent_init_stddev = 1e-2;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs > 0 && !(learning_rate > 0.0 && latent_learning_rate > 0.0)) {
      throw ArgumentError("TrainConfig: learning rates must be positive");
    }
    if (!(lambda >= 0.0)) throw ArgumentError("TrainConfig: lambda must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ArgumentError("TrainConfig: Adam betas must be in [0, 1)");
    }
    if (!(latent_init_stddev >= 0.0)) throw ArgumentError("TrainConfig: negative init stddev");
  }
};

struct TrainResult {
  MmgnModel model;
  Matrix latents;                    // T x k
  std::vector<double> loss_history;  // objective at the start of each epoch
  double final_data_loss = 0.0;      // data term after the last update
};

namespace detail {

class Adam {
 public:
  Adam(std::size_t size, const TrainConfig& cfg) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  // Updates `params` in place; `offset` addresses this block inside the moment buffers.
  void step(std::span<double> params, std::span<const double> grads, std::size_t offset, double lr) {
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double& m = m_[offset + i];
      double& v = v_[offset + i];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grads[i];
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grads[i] * grads[i];
      params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
    }
  }

  void tick() { ++t_; }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

inline double cosine_lr(double start, double floor_fraction, std::size_t epoch, std::size_t epochs) {
  if (epochs <= 1) return start;
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  const double f = floor_fraction + (1.0 - floor_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return start * f;
}

}  // namespace detail

/// Joint full-batch Adam optimization of the decoder and the latent table.
/// Observer, when given, is called after every epoch with (epoch, loss).
inline TrainResult train(const ObservationSet& obs, const TrainConfig& cfg, const MmgnArch& arch,
                         const std::function<void(std::size_t, double)>& observer = {}) {
  cfg.validate();
  const Batch batch = make_batch(obs);
  TrainResult result;
  result.model = init_model(arch, cfg.seed);
  SplitMix64 latent_rng(cfg.seed ^ 0x6c6174656e74ULL);
  result.latents.resize(static_cast<Eigen::Index>(batch.frames), static_cast<Eigen::Index>(arch.latent_dim));
  for (Eigen::Index i = 0; i < result.latents.size(); ++i) {
    result.latents.data()[i] = latent_rng.normal() * cfg.latent_init_stddev;
  }

  MmgnModel& model = result.model;
  const std::size_t n_params = model.parameter_count();
  detail::Adam model_opt(n_params, cfg);
  detail::Adam latent_opt(static_cast<std::size_t>(result.latents.size()), cfg);
  result.loss_history.reserve(cfg.epochs);

  MmgnModel grad = model.zeros_like();
  Matrix grad_latents;
  detail::Workspace workspace;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    grad.for_each_block([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    const LossTerms loss =
        loss_and_gradient(model, result.latents, batch, cfg.lambda, &grad, &grad_latents, &workspace);
    const double total = loss.total();
    if (!std::isfinite(total)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at epoch " << epoch << " (data " << loss.data << ", reg "
          << loss.regularization << ")";
      throw NonFiniteError(msg.str());
    }
    result.loss_history.push_back(total);

    const double lr = detail::cosine_lr(cfg.learning_rate, cfg.final_lr_fraction, epoch, cfg.epochs);
    const double latent_lr =
        detail::cosine_lr(cfg.latent_learning_rate, cfg.final_lr_fraction, epoch, cfg.epochs);
    model_opt.tick();
    latent_opt.tick();
    std::vector<std::span<const double>> grad_blocks;
    grad.for_each_block([&](std::span<const double> s) { grad_blocks.push_back(s); });
    std::size_t offset = 0, block = 0;
    model.for_each_block([&](std::span<double> s) {
      model_opt.step(s, grad_blocks[block++], offset, lr);
      offset += s.size();
    });
    latent_opt.step({result.latents.data(), static_cast<std::size_t>(result.latents.size())},
                    {grad_latents.data(), static_cast<std::size_t>(grad_latents.size())}, 0, latent_lr);
    for (auto& g : model.gabor) g.gamma = g.gamma.cwiseMax(0.0);
    if (observer) observer(epoch, total);
  }
  result.final_data_loss =
      loss_and_gradient(model, result.latents, batch, cfg.lambda, nullptr, nullptr, &workspace).data;
  if (!std::isfinite(result.final_data_loss)) throw NonFiniteError("train: non-finite final loss");
  return result;
}

struct InferConfig {
  std::size_t iterations = 100;
  double lambda = 1e-4;
  double initial_damping = 1e-3;
};

/// Test-time latent inference for one frame with the decoder frozen.
/// Minimizes (1/N) sum (D(x, z) - u)^2 + lambda |z|^2 by Levenberg-Marquardt
/// starting from `init` (zeros when empty).
inline Vector infer_latent(const MmgnModel& model, std::span<const Observation> frame, Dims3 dims,
                           const InferConfig& cfg, const Vector& init = Vector()) {
  if (frame.empty()) throw ArgumentError("infer_latent: empty observation set");
  const auto k = static_cast<Eigen::Index>(model.latent_dim());
  Vector z = init.size() == 0 ? Vector::Zero(k) : init;
  if (z.size() != k) throw DimensionError("infer_latent: initial latent size mismatch");
  if (cfg.iterations == 0) return z;

  const auto n = static_cast<Eigen::Index>(frame.size());
  const SamplePoints pts = frame_points(frame, dims);
  Vector target(n);
  for (Eigen::Index r = 0; r < n; ++r) target(r) = frame[static_cast<std::size_t>(r)].value;
  const double nd = static_cast<double>(n);
  detail::Workspace w;
  auto evaluate = [&](const Vector& zz, Eigen::MatrixXd* jacobian, Vector* residual) {
    w.z_rows = zz.transpose().replicate(n, 1);
    detail::forward_batch(model, pts, w.z_rows, jacobian != nullptr, w);
    *residual = w.output - target;
    if (jacobian) {
      detail::backward_batch(model, pts, w.z_rows, Vector::Ones(n), nullptr, w);
      *jacobian = w.dz;
    }
    return residual->squaredNorm() / nd + cfg.lambda * zz.squaredNorm();
  };

  double damping = cfg.initial_damping;
  Eigen::MatrixXd jac;
  Vector residual;
  double f = evaluate(z, &jac, &residual);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Eigen::MatrixXd hess = (2.0 / nd) * jac.transpose() * jac + 2.0 * cfg.lambda * eye;
    const Vector grad = (2.0 / nd) * jac.transpose() * residual + 2.0 * cfg.lambda * z;
    if (grad.norm() < 1e-15) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      const Eigen::MatrixXd damped = hess + damping * Eigen::MatrixXd(hess.diagonal().asDiagonal()) + damping * eye;
      const Vector step = damped.ldlt().solve(-grad);
      const Vector candidate = z + step;
      Vector cand_residual;
      const double fc = evaluate(candidate, nullptr, &cand_residual);
      if (std::isfinite(fc) && fc <= f) {
        z = candidate;
        damping = std::max(damping * 0.3, 1e-12);
        accepted = true;
      } else {
        damping *= 10.0;
      }
    }
    if (!accepted) break;
    f = evaluate(z, &jac, &residual);
  }
  return z;
}

/// Evaluates a trained decoder on a regular grid. Gabor features depend only
/// on position, so they are computed once and reused for every latent.
class GridEvaluator {
 public:
  GridEvaluator(const MmgnModel& model, std::size_t nlat, std::size_t nlon)
      : model_(model), nlat_(nlat), nlon_(nlon) {
    model.validate();
    if (nlat == 0 || nlon == 0) throw DimensionError("GridEvaluator: empty grid");
    const SamplePoints pts = SamplePoints::full_grid(nlat, nlon);
    for (const auto& g : model.gabor) features_.push_back(detail::gabor_values(pts, g));
  }

  /// Decoder output over the grid for one latent, row-major (lat, lon).
  Vector frame(std::span<const double> z) const {
    if (z.size() != model_.latent_dim()) throw DimensionError("GridEvaluator: latent size mismatch");
    const Eigen::Map<const Vector> zv(z.data(), static_cast<Eigen::Index>(z.size()));
    detail::Array hidden;
    for (std::size_t l = 0; l < model_.arch.layers; ++l) {
      const Vector mod = Vector::Ones(static_cast<Eigen::Index>(model_.hidden())) + model_.modulation[l] * zv;
      if (l == 0) {
        hidden = features_[0];
      } else {
        Eigen::MatrixXd pre = hidden.matrix() * model_.linear[l - 1].transpose();
        pre.rowwise() += model_.bias[l - 1].transpose();
        hidden = pre.array() * features_[l];
      }
      hidden.rowwise() *= mod.transpose().array();
    }
    return (hidden.matrix() * model_.w_out).array() + model_.b_out;
  }

  Tensor3 evaluate(const Matrix& latents) const {
    if (static_cast<std::size_t>(latents.cols()) != model_.latent_dim()) {
      throw DimensionError("reconstruct: latent width does not match model");
    }
    const auto nt = static_cast<std::size_t>(latents.rows());
    if (nt == 0) throw DimensionError("reconstruct: no latent rows");
    Tensor3 out({nt, nlat_, nlon_});
    const std::size_t per_frame = nlat_ * nlon_;
    for (std::size_t t = 0; t < nt; ++t) {
      const Vector z = latents.row(static_cast<Eigen::Index>(t)).transpose();
      const Vector u = frame({z.data(), static_cast<std::size_t>(z.size())});
      std::copy(u.data(), u.data() + per_frame, out.values().begin() + static_cast<std::ptrdiff_t>(t * per_frame));
    }
    return out;
  }

 private:
  const MmgnModel& model_;
  std::size_t nlat_, nlon_;
  std::vector<detail::Array> features_;
};

/// Full-grid reconstruction at arbitrary dims (the decoder is continuous in x).
inline Tensor3 reconstruct_grid(const MmgnModel& model, const Matrix& latents, const Dims3& dims) {
  if (static_cast<std::size_t>(latents.rows()) != dims[0]) {
    throw DimensionError("reconstruct_grid: latent rows do not match requested nt");
  }
  return GridEvaluator(model, dims[1], dims[2]).evaluate(latents);
}

inline double relative_l2_error(const Tensor3& estimate, const Tensor3& truth) {
  if (estimate.dims() != truth.dims()) throw DimensionError("relative_l2_error: dims mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = estimate.values()[i] - truth.values()[i];
    num += d * d;
    den += truth.values()[i] * truth.values()[i];
  }
  if (den == 0.0) throw DegenerateError("relative_l2_error: zero reference");
  return std::sqrt(num / den);
}

}  // namespace latentscope
