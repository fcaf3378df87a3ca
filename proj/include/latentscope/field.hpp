#pragma once

// Synthetic spatiotemporal field generator and sparse observation sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "latentscope/errors.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/tensor.hpp"

namespace latentscope {

/// Cell-centred normalized coordinate of grid index `index` on an axis with
/// `count` cells. Covers (-1, 1) symmetrically.
inline double grid_coord(std::size_t index, std::size_t count) {
  return -1.0 + (2.0 * static_cast<double>(index) + 1.0) / static_cast<double>(count);
}

struct Wave {
  double amplitude = 0.0;
  double k_lat = 0.0;  // wavevector component along normalized latitude
  double k_lon = 0.0;  // wavevector component along normalized longitude
  double omega = 0.0;  // angular frequency per time step
  double phase = 0.0;
};

struct FieldConfig {
  std::size_t nlat = 32;
  std::size_t nlon = 64;
  std::size_t nt = 48;
  std::vector<Wave> waves;
  double gradient = 0.0;          // meridional gradient amplitude G
  double seasonal_amplitude = 0.0;
  double seasonal_period = 12.0;  // in time steps
  double noise_stddev = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (nlat < 4 || nlon < 4) throw ArgumentError("FieldConfig: nlat and nlon must be >= 4");
    if (nt < 2) throw ArgumentError("FieldConfig: nt must be >= 2");
    if (!(noise_stddev >= 0.0)) throw ArgumentError("FieldConfig: noise stddev must be >= 0");
    if (!(seasonal_period > 0.0)) throw ArgumentError("FieldConfig: seasonal period must be > 0");
  }
};

/// Desk-scale default: 32 x 64 grid, 48 steps, three traveling waves with
/// mutually incommensurate frequencies, 12-step seasonal cycle, sigma 0.02.
inline FieldConfig default_field_config(std::uint64_t seed = 0) {
  FieldConfig cfg;
  cfg.nlat = 32;
  cfg.nlon = 64;
  cfg.nt = 48;
  cfg.waves = {
      {0.60, 1.5, 3.0, 2.0 * std::numbers::pi / 16.0, 0.3},
      {0.40, -2.5, 4.5, 0.37, 1.1},
      {0.25, 4.0, -2.0, 0.90, 2.0},
  };
  cfg.gradient = 1.0;
  cfg.seasonal_amplitude = 0.5;
  cfg.seasonal_period = 12.0;
  cfg.noise_stddev = 0.02;
  cfg.seed = seed;
  return cfg;
}

inline Tensor3 generate_field(const FieldConfig& cfg) {
  cfg.validate();
  Tensor3 field({cfg.nt, cfg.nlat, cfg.nlon});
  SplitMix64 rng(cfg.seed);
  for (std::size_t t = 0; t < cfg.nt; ++t) {
    const double time = static_cast<double>(t);
    // Reducing t modulo the period first makes the cycle repeat bitwise.
    const double seasonal = cfg.seasonal_amplitude *
                            std::sin(2.0 * std::numbers::pi * std::fmod(time, cfg.seasonal_period) / cfg.seasonal_period);
    for (std::size_t i = 0; i < cfg.nlat; ++i) {
      const double lat = grid_coord(i, cfg.nlat);
      for (std::size_t j = 0; j < cfg.nlon; ++j) {
        const double lon = grid_coord(j, cfg.nlon);
        double u = 0.0;
        for (const Wave& w : cfg.waves) {
          u += w.amplitude * std::sin(w.k_lat * lat + w.k_lon * lon - w.omega * time + w.phase);
        }
        u += cfg.gradient * lat + seasonal;
        if (cfg.noise_stddev > 0.0) u += cfg.noise_stddev * rng.normal();
        field(t, i, j) = u;
      }
    }
  }
  return field;
}

struct Observation {
  std::uint32_t lat = 0;
  std::uint32_t lon = 0;
  double value = 0.0;

  bool operator==(const Observation&) const = default;
};

/// Sparse measurements u^i_t: one list per time step, grid dims of the source.
struct ObservationSet {
  Dims3 dims{0, 0, 0};
  double rate = 0.0;
  std::vector<std::vector<Observation>> frames;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.size();
    return n;
  }

  bool operator==(const ObservationSet&) const = default;
};

/// Number of points kept per frame. The small epsilon keeps products such as
/// 0.29 * 100 from flooring to 28.
inline std::size_t points_per_frame(double rate, std::size_t grid_points) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(grid_points) + 1e-9));
}

/// Independent uniform draw without replacement in every frame.
inline ObservationSet sample_observations(const Tensor3& field, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ArgumentError("sample_observations: rate must be in (0, 1]");
  const auto [nt, nlat, nlon] = field.dims();
  const std::size_t grid = nlat * nlon;
  const std::size_t count = points_per_frame(rate, grid);
  if (count == 0) throw ArgumentError("sample_observations: rate yields zero points per frame");

  ObservationSet obs;
  obs.dims = field.dims();
  obs.rate = rate;
  obs.frames.resize(nt);
  SplitMix64 rng(seed);
  for (std::size_t t = 0; t < nt; ++t) {
    std::vector<std::size_t> picked = rng.sample_without_replacement(grid, count);
    std::sort(picked.begin(), picked.end());
    auto& frame = obs.frames[t];
    frame.reserve(count);
    for (std::size_t flat : picked) {
      const std::size_t i = flat / nlon;
      const std::size_t j = flat % nlon;
      frame.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), field(t, i, j)});
    }
  }
  return obs;
}

}  // namespace latentscope
