#include "lsn/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lsn/error.hpp"
#include "lsn/fft.hpp"

namespace lsn {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::size_t wrap(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

}  // namespace

double MicroscopeConfig::pupil_radius_px() const {
  return na * static_cast<double>(grid_n) * dx / wavelength;
}

void MicroscopeConfig::validate() const {
  if (!(wavelength > 0.0) || !(dx > 0.0)) {
    throw ValidationError("wavelength and dx must be positive");
  }
  if (!(na > 0.0) || na >= 1.0) throw ValidationError("na must lie in (0, 1)");
  if (!fft::is_power_of_two(grid_n)) {
    throw UnsupportedSizeError("grid_n must be a power of two, got " + std::to_string(grid_n));
  }
  if (sensor_n < 2 || grid_n % sensor_n != 0) {
    throw ShapeError("sensor_n (" + std::to_string(sensor_n) + ") must be >= 2 and divide grid_n (" +
                     std::to_string(grid_n) + ")");
  }
  const double r = pupil_radius_px();
  if (r < 1.0 || r >= static_cast<double>(grid_n) / 2.0) {
    throw GeometryError("pupil radius " + std::to_string(r) + " px outside [1, grid_n/2)");
  }
  if (led_rings.empty()) throw GeometryError("at least one LED ring is required");
  for (const LedRing& ring : led_rings) {
    if (!(ring.polar_angle_deg >= 0.0) || ring.polar_angle_deg >= 90.0) {
      throw GeometryError("ring polar angle must lie in [0, 90) degrees, got " +
                          std::to_string(ring.polar_angle_deg));
    }
    if (ring.count < 1) throw GeometryError("ring LED count must be >= 1");
    if (ring.polar_angle_deg == 0.0 && ring.count != 1) {
      throw GeometryError("the axial ring (0 degrees) must hold exactly one LED");
    }
  }
}

std::string_view to_string(FieldKind kind) {
  return kind == FieldKind::BrightField ? "bright" : "dark";
}

std::vector<Led> build_led_array(const MicroscopeConfig& config) {
  config.validate();
  const double scale = static_cast<double>(config.grid_n) * config.dx / config.wavelength;
  const int support_radius = static_cast<int>(std::floor(config.pupil_radius_px()));
  const int half = static_cast<int>(config.grid_n / 2);

  std::vector<Led> leds;
  for (std::size_t r = 0; r < config.led_rings.size(); ++r) {
    const LedRing& ring = config.led_rings[r];
    const double sin_polar = std::sin(ring.polar_angle_deg * kDegToRad);
    std::vector<double> azimuths;
    for (int j = 0; j < ring.count; ++j) {
      double az = std::fmod(ring.azimuth_offset_deg + 360.0 * j / ring.count, 360.0);
      if (az < 0.0) az += 360.0;
      azimuths.push_back(az);
    }
    std::sort(azimuths.begin(), azimuths.end());
    for (double az : azimuths) {
      Led led;
      led.index = static_cast<int>(leds.size());
      led.ring = static_cast<int>(r);
      led.polar_deg = ring.polar_angle_deg;
      led.azimuth_deg = az;
      led.shift.x = static_cast<int>(std::lround(scale * sin_polar * std::cos(az * kDegToRad)));
      led.shift.y = static_cast<int>(std::lround(scale * sin_polar * std::sin(az * kDegToRad)));
      led.field_kind = sin_polar <= config.na ? FieldKind::BrightField : FieldKind::DarkField;
      if (std::max(std::abs(led.shift.x), std::abs(led.shift.y)) + support_radius > half - 1) {
        throw GeometryError("LED " + std::to_string(led.index) +
                            " shifts the pupil outside the frequency grid");
      }
      leds.push_back(led);
    }
  }
  return leds;
}

std::size_t center_led(std::span<const Led> leds) {
  if (leds.empty()) throw ValidationError("LED list is empty");
  std::size_t best = 0;
  long best_d = -1;
  for (std::size_t i = 0; i < leds.size(); ++i) {
    const long d = static_cast<long>(leds[i].shift.x) * leds[i].shift.x +
                   static_cast<long>(leds[i].shift.y) * leds[i].shift.y;
    if (best_d < 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

Mask pupil_support(const MicroscopeConfig& config) {
  const std::size_t n = config.grid_n;
  const double r = config.pupil_radius_px();
  Mask mask = Mask::square(n, 0);
  const long h = static_cast<long>(n / 2);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t col = 0; col < n; ++col) {
      const double ky = static_cast<double>(static_cast<long>(row) - h);
      const double kx = static_cast<double>(static_cast<long>(col) - h);
      mask(row, col) = (kx * kx + ky * ky <= r * r) ? 1 : 0;
    }
  }
  return mask;
}

RealImage coherent_intensity(const ComplexField& spectrum, const RealImage& pupil,
                             PixelShift shift) {
  const std::size_t n = spectrum.size();
  if (pupil.rows() != n || pupil.cols() != n) {
    throw ShapeError("pupil is " + std::to_string(pupil.rows()) + "x" +
                     std::to_string(pupil.cols()) + " but spectrum is " + std::to_string(n) +
                     "x" + std::to_string(n));
  }
  // G(k) = O^(k - s) P(k)
  Array2D<Complex> filtered = Array2D<Complex>::square(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src_r = wrap(static_cast<long>(r) - shift.y, n);
    for (std::size_t c = 0; c < n; ++c) {
      const double p = pupil(r, c);
      if (p == 0.0) continue;
      filtered(r, c) = spectrum(src_r, wrap(static_cast<long>(c) - shift.x, n)) * p;
    }
  }
  fft::centered_transform(filtered, fft::Direction::Backward);
  RealImage out(n, n);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::norm(filtered[i]);
  return out;
}

RealImage downsample_to_sensor(const RealImage& field, std::size_t sensor_n) {
  if (sensor_n == 0 || field.rows() % sensor_n != 0 || field.cols() % sensor_n != 0 ||
      !field.is_square()) {
    throw ShapeError("cannot block-downsample " + std::to_string(field.rows()) + "x" +
                     std::to_string(field.cols()) + " to " + std::to_string(sensor_n));
  }
  const std::size_t b = field.rows() / sensor_n;
  const double inv_area = 1.0 / static_cast<double>(b * b);
  RealImage out(sensor_n, sensor_n);
  for (std::size_t r = 0; r < field.rows(); ++r) {
    for (std::size_t c = 0; c < field.cols(); ++c) out(r / b, c / b) += field(r, c);
  }
  for (double& v : out) v *= inv_area;
  return out;
}

RealImage downsample_adjoint(const RealImage& sensor, std::size_t grid_n) {
  if (!sensor.is_square() || sensor.rows() == 0 || grid_n % sensor.rows() != 0) {
    throw ShapeError("sensor image does not tile the grid");
  }
  const std::size_t b = grid_n / sensor.rows();
  const double inv_area = 1.0 / static_cast<double>(b * b);
  RealImage out(grid_n, grid_n);
  for (std::size_t r = 0; r < grid_n; ++r) {
    for (std::size_t c = 0; c < grid_n; ++c) out(r, c) = sensor(r / b, c / b) * inv_area;
  }
  return out;
}

RealImage add_detector_noise(const RealImage& image, double sigma_frac, Rng& rng) {
  if (!(sigma_frac >= 0.0)) throw ValidationError("noise sigma fraction must be >= 0");
  RealImage out = image;
  if (sigma_frac == 0.0) return out;
  // Captures are non-negative, so max|image| == max(image) for them.
  double peak = 0.0;
  for (double v : image) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma_frac * peak);
  for (double& v : out) v += noise(rng);
  return out;
}

RealImage forward_capture(const ComplexField& object, const PhysicalParams& params,
                          const MicroscopeConfig& config, double noise_sigma_frac, Rng& rng) {
  if (object.plane() != Plane::Object) {
    throw ValidationError("forward_capture expects an object-plane field");
  }
  if (object.size() != config.grid_n) throw ShapeError("object does not match grid_n");
  const std::vector<Led> leds = build_led_array(config);
  if (params.led_weights.size() != leds.size()) {
    throw ShapeError("expected " + std::to_string(leds.size()) + " LED weights, got " +
                     std::to_string(params.led_weights.size()));
  }
  if (params.pupil.rows() != config.grid_n || params.pupil.cols() != config.grid_n) {
    throw ShapeError("pupil does not match grid_n");
  }
  if (!(noise_sigma_frac >= 0.0)) throw ValidationError("noise sigma fraction must be >= 0");

  const ComplexField spectrum = fft::fft2(object);
  const std::size_t n = config.grid_n;
  RealImage positive(n, n);
  RealImage negative(n, n);
  for (std::size_t i = 0; i < leds.size(); ++i) {
    const double w = params.led_weights[i];
    if (w == 0.0) continue;
    const RealImage intensity = coherent_intensity(spectrum, params.pupil, leds[i].shift);
    RealImage& target = w > 0.0 ? positive : negative;
    const double a = std::abs(w);
    for (std::size_t j = 0; j < target.size(); ++j) target[j] += a * intensity[j];
  }

  RealImage pos = downsample_to_sensor(positive, config.sensor_n);
  RealImage neg = downsample_to_sensor(negative, config.sensor_n);
  if (config.capture_mode == CaptureMode::SingleCapture) {
    for (std::size_t j = 0; j < pos.size(); ++j) pos[j] -= neg[j];
    return add_detector_noise(pos, noise_sigma_frac, rng);
  }
  pos = add_detector_noise(pos, noise_sigma_frac, rng);
  neg = add_detector_noise(neg, noise_sigma_frac, rng);
  for (std::size_t j = 0; j < pos.size(); ++j) pos[j] -= neg[j];
  return pos;
}

double pupil_transmission(const PhysicalParams& params) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < params.pupil.size(); ++i) {
    if (params.pupil_support.size() == params.pupil.size() && params.pupil_support[i] == 0) continue;
    sum += params.pupil[i];
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double led_emission(const PhysicalParams& params) {
  if (params.led_weights.empty()) return 0.0;
  double sum = 0.0;
  for (double w : params.led_weights) sum += std::abs(w);
  return sum / static_cast<double>(params.led_weights.size());
}

}  // namespace lsn
