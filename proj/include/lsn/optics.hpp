#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "lsn/array2d.hpp"
#include "lsn/field.hpp"

namespace lsn {

using Rng = std::mt19937_64;

struct LedRing {
  double polar_angle_deg = 0.0;
  int count = 1;
  double azimuth_offset_deg = 0.0;
};

// How signed LED weights become a detector image.
enum class CaptureMode {
  // One capture with the positive weights, one with |negative weights|, each
  // noised independently, then subtracted.
  TwoCaptures,
  // Signed weighted sum in a single noisy capture (ablation only).
  SingleCapture,
};

struct MicroscopeConfig {
  double wavelength = 522e-9;  // m
  double na = 0.2;
  std::size_t grid_n = 256;
  double dx = 0.16e-6;  // object-plane sampling, m/pixel
  std::size_t sensor_n = 64;
  std::vector<LedRing> led_rings = {{0.0, 1, 0.0}, {16.37, 12, 0.0}, {34.30, 12, 15.0}};
  CaptureMode capture_mode = CaptureMode::TwoCaptures;

  // Pupil cutoff in frequency pixels: na * grid_n * dx / wavelength.
  double pupil_radius_px() const;
  std::size_t block() const { return grid_n / sensor_n; }

  // Throws GeometryError / ShapeError / UnsupportedSizeError.
  void validate() const;
};

enum class FieldKind { BrightField, DarkField };

std::string_view to_string(FieldKind kind);

struct PixelShift {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelShift&, const PixelShift&) = default;
};

struct Led {
  int index = 0;
  int ring = 0;
  double polar_deg = 0.0;
  double azimuth_deg = 0.0;
  PixelShift shift;  // spectrum shift in frequency pixels
  FieldKind field_kind = FieldKind::BrightField;
};

// LEDs ordered ring by ring, ascending azimuth within a ring.
std::vector<Led> build_led_array(const MicroscopeConfig& config);

// Index of the axial LED (smallest shift magnitude, first on ties).
std::size_t center_led(std::span<const Led> leds);

// Disk |k| <= R around DC, in the centred frequency layout.
Mask pupil_support(const MicroscopeConfig& config);

struct PhysicalParams {
  std::vector<double> led_weights;  // [-1, 1]
  RealImage pupil;                  // [0, 1], zero outside support
  Mask pupil_support;
};

// |ifft2(spectrum(k - shift) * pupil(k))|^2 on the full grid.
RealImage coherent_intensity(const ComplexField& spectrum, const RealImage& pupil,
                             PixelShift shift);

// Block-mean integration onto sensor_n x sensor_n pixels.
RealImage downsample_to_sensor(const RealImage& field, std::size_t sensor_n);

// Exact adjoint of downsample_to_sensor.
RealImage downsample_adjoint(const RealImage& sensor, std::size_t grid_n);

// image + N(0, (sigma_frac * max|image|)^2) per pixel.
RealImage add_detector_noise(const RealImage& image, double sigma_frac, Rng& rng);

// Weighted incoherent sum over all LEDs, sampled on the sensor and noised.
RealImage forward_capture(const ComplexField& object, const PhysicalParams& params,
                          const MicroscopeConfig& config, double noise_sigma_frac, Rng& rng);

// Fraction of the support area transmitted by the pupil (mean over support).
double pupil_transmission(const PhysicalParams& params);
// Sum |w_i| / n.
double led_emission(const PhysicalParams& params);

}  // namespace lsn
