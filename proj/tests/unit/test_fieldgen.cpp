#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "latentscope/field.hpp"

using namespace latentscope;
using Catch::Matchers::WithinAbs;

namespace {

FieldConfig quiet(std::size_t nlat, std::size_t nlon, std::size_t nt) {
  FieldConfig c;
  c.nlat = nlat;
  c.nlon = nlon;
  c.nt = nt;
  return c;
}

}  // namespace

TEST_CASE("a single unit wave stays inside [-1, 1]") {
  FieldConfig c = quiet(16, 24, 10);
  c.waves = {{1.0, 2.3, -1.7, 0.4, 0.9}};
  const Tensor3 u = generate_field(c);
  CHECK(u.max_abs() <= 1.0);
  CHECK(u.max_abs() > 0.9);
}

TEST_CASE("the seasonal cycle repeats bitwise when the period divides nt") {
  FieldConfig c = quiet(4, 6, 36);
  c.seasonal_amplitude = 0.7;
  c.seasonal_period = 12;
  c.gradient = 0.3;
  const Tensor3 u = generate_field(c);
  for (std::size_t t = 0; t + 12 < 36; ++t) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) CHECK(u(t + 12, i, j) == u(t, i, j));
    }
  }
}

TEST_CASE("waves with period-commensurate frequencies repeat with the period") {
  FieldConfig c = quiet(8, 8, 24);
  c.seasonal_amplitude = 0.5;
  c.seasonal_period = 12;
  c.waves = {{0.6, 1.5, 3.0, 2 * std::numbers::pi / 12, 0.3}, {0.4, -2.5, 4.5, 2 * std::numbers::pi / 6, 1.1}};
  const Tensor3 u = generate_field(c);
  for (std::size_t t = 0; t + 12 < 24; ++t) {
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) CHECK_THAT(u(t + 12, i, j), WithinAbs(u(t, i, j), 1e-12));
    }
  }
}

TEST_CASE("the same config generates identical fields") {
  const FieldConfig c = default_field_config(7);
  CHECK(generate_field(c) == generate_field(c));
  CHECK_FALSE(generate_field(c) == generate_field(default_field_config(8)));
}

TEST_CASE("mean over one seasonal period is the meridional gradient alone") {
  FieldConfig c = quiet(8, 5, 24);
  c.gradient = 1.3;
  c.seasonal_amplitude = 0.8;
  c.seasonal_period = 12;
  const Tensor3 u = generate_field(c);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0.0;
      for (std::size_t t = 0; t < 12; ++t) mean += u(t, i, j);
      mean /= 12.0;
      CHECK_THAT(mean, WithinAbs(1.3 * grid_coord(i, 8), 1e-9));
    }
  }
}

TEST_CASE("field config validation") {
  CHECK_THROWS_AS(generate_field(quiet(3, 8, 4)), ArgumentError);
  CHECK_THROWS_AS(generate_field(quiet(8, 8, 1)), ArgumentError);
  FieldConfig c = quiet(8, 8, 4);
  c.noise_stddev = -1;
  CHECK_THROWS_AS(generate_field(c), ArgumentError);
}

TEST_CASE("latitude coordinates are normalized cell centers") {
  CHECK(grid_coord(0, 4) == -0.75);
  CHECK(grid_coord(3, 4) == 0.75);
}

TEST_CASE("rate 1 observes every grid point in every frame") {
  FieldConfig c = quiet(4, 5, 3);
  c.waves = {{1, 1, 1, 0.1, 0}};
  const Tensor3 u = generate_field(c);
  const ObservationSet obs = sample_observations(u, 1.0, 3);
  REQUIRE(obs.frames.size() == 3);
  for (const auto& f : obs.frames) CHECK(f.size() == 20);
}

TEST_CASE("rate 0.05 on a 32x64 grid keeps 102 points per frame") {
  const Tensor3 u = generate_field(default_field_config(0));
  const ObservationSet obs = sample_observations(u, 0.05, 1);
  CHECK(points_per_frame(0.05, 2048) == 102);
  for (const auto& f : obs.frames) CHECK(f.size() == 102);
  CHECK(obs.total() == 102 * 48);
}

TEST_CASE("observations are unique per frame, match the field, and vary across frames") {
  const Tensor3 u = generate_field(default_field_config(2));
  const ObservationSet obs = sample_observations(u, 0.1, 5);
  std::set<std::pair<std::uint32_t, std::uint32_t>> first;
  for (std::size_t t = 0; t < obs.frames.size(); ++t) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& o : obs.frames[t]) {
      CHECK(seen.insert({o.lat, o.lon}).second);
      CHECK(o.value == u(t, o.lat, o.lon));
    }
    if (t == 0) first = seen;
    if (t == 1) CHECK(seen != first);
  }
}

TEST_CASE("sampling is deterministic given the seed") {
  const Tensor3 u = generate_field(default_field_config(2));
  CHECK(sample_observations(u, 0.05, 9) == sample_observations(u, 0.05, 9));
  CHECK_FALSE(sample_observations(u, 0.05, 9) == sample_observations(u, 0.05, 10));
}

TEST_CASE("sampling rejects rates outside (0, 1] and empty frames") {
  const Tensor3 u = generate_field(quiet(4, 4, 2));
  CHECK_THROWS_AS(sample_observations(u, 0.0, 1), ArgumentError);
  CHECK_THROWS_AS(sample_observations(u, 1.5, 1), ArgumentError);
  CHECK_THROWS_AS(sample_observations(u, 0.05, 1), ArgumentError);  // floor(0.8) = 0
}
