#pragma once

#include <random>

#include "lsn/field.hpp"
#include "lsn/optics.hpp"
#include "oracles.hpp"

namespace fixtures {

// 16x16 grid, 8x8 sensor, pupil radius 3.5 px, five LEDs (three bright-field,
// two dark-field).
inline lsn::MicroscopeConfig micro_config() {
  lsn::MicroscopeConfig c;
  c.wavelength = 0.5e-6;
  c.na = 0.25;
  c.grid_n = 16;
  c.dx = 0.4375e-6;
  c.sensor_n = 8;
  c.led_rings = {{0.0, 1, 0.0}, {8.0, 2, 0.0}, {16.6, 2, 90.0}};
  return c;
}

// 64x64 grid with a small pupil so the band-limited imager works on a
// 16x16 sub-grid.
inline lsn::MicroscopeConfig small_pupil_config(std::size_t sensor_n) {
  lsn::MicroscopeConfig c;
  c.wavelength = 0.5e-6;
  c.na = 0.25;
  c.grid_n = 64;
  c.dx = 0.109375e-6;
  c.sensor_n = sensor_n;
  c.led_rings = {{0.0, 1, 0.0}, {20.0, 4, 45.0}, {40.0, 6, 0.0}};
  return c;
}

inline lsn::ComplexField random_object(std::size_t n, std::mt19937_64& rng) {
  return lsn::ComplexField(oracle::random_field(n, rng), lsn::Plane::Object);
}

inline lsn::PhysicalParams random_params(const lsn::MicroscopeConfig& config, std::size_t led_count,
                                         std::mt19937_64& rng, bool signed_weights = true) {
  std::uniform_real_distribution<double> w(signed_weights ? -1.0 : 0.1, 1.0);
  std::uniform_real_distribution<double> p(0.2, 1.0);
  lsn::PhysicalParams params;
  params.pupil_support = lsn::pupil_support(config);
  params.pupil = lsn::RealImage(config.grid_n, config.grid_n);
  for (std::size_t i = 0; i < params.pupil.size(); ++i) {
    params.pupil[i] = params.pupil_support[i] ? p(rng) : 0.0;
  }
  for (std::size_t i = 0; i < led_count; ++i) params.led_weights.push_back(w(rng));
  return params;
}

}  // namespace fixtures
