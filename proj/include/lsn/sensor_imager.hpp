#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "lsn/array2d.hpp"
#include "lsn/fft.hpp"
#include "lsn/field.hpp"
#include "lsn/grad.hpp"
#include "lsn/optics.hpp"

namespace lsn {

// Square window [-half, half]^2 of a centred object spectrum, optionally
// multiplied by the separable phase ramp of an integer object translation.
class SpectrumWindow {
 public:
  SpectrumWindow() = default;
  SpectrumWindow(int half, std::shared_ptr<const std::vector<Complex>> values);

  // Cut the window out of a full centred spectrum.
  static SpectrumWindow crop(const ComplexField& spectrum, int half);

  // Same window for the object translated by (dy, dx) pixels on an n-grid.
  SpectrumWindow translated(long dy, long dx, std::size_t grid_n) const;

  int half() const { return half_; }
  Complex at(int ky, int kx) const {
    const std::size_t w = static_cast<std::size_t>(2 * half_ + 1);
    Complex v = (*values_)[static_cast<std::size_t>(ky + half_) * w +
                           static_cast<std::size_t>(kx + half_)];
    if (!ramp_y_.empty()) {
      v *= ramp_y_[static_cast<std::size_t>(ky + half_)] * ramp_x_[static_cast<std::size_t>(kx + half_)];
    }
    return v;
  }

 private:
  int half_ = 0;
  std::shared_ptr<const std::vector<Complex>> values_;
  std::vector<Complex> ramp_y_;
  std::vector<Complex> ramp_x_;
};

// Computes the noise-free sensor captures of the weighted intensity sum and
// the adjoints for LED weights and pupil, without touching the full grid.
//
// A pupil supported on |k| <= R' produces coherent fields band-limited to R'
// and intensities band-limited to 2R'.  Sampling the field on an M-grid with
// M > 4R' (M | grid_n) therefore determines the intensity spectrum exactly,
// and the sensor block-mean is applied in the Fourier domain.  Results agree
// with coherent_intensity + downsample_to_sensor to rounding error.
class SensorImager {
 public:
  SensorImager(const MicroscopeConfig& config, std::vector<Led> leds);

  const MicroscopeConfig& config() const { return config_; }
  const std::vector<Led>& leds() const { return leds_; }
  const Mask& support() const { return support_; }
  std::size_t work_n() const { return m_; }
  // Half-width of the spectrum window every LED can reach.
  int window_half() const { return window_half_; }

  SpectrumWindow window(const ComplexField& spectrum) const {
    return SpectrumWindow::crop(spectrum, window_half_);
  }

  // Per-thread buffers; forward() leaves the per-LED fields here for backward().
  class Scratch {
   public:
    Scratch() = default;

   private:
    friend class SensorImager;
    std::vector<fft::AlignedBuffer> fields;   // g_i on the M-grid
    std::vector<std::vector<Complex>> folded;  // per-LED sensor spectra
    std::vector<char> active;
    fft::AlignedBuffer work;
    fft::AlignedBuffer sensor_a;
    fft::AlignedBuffer sensor_b;
    fft::AlignedBuffer upstream_b;
    fft::AlignedBuffer adjoint;
  };

  // Noise-free positive and |negative| captures.  With all_leds set every LED
  // is simulated (needed for weight gradients); otherwise zero-weight LEDs are
  // skipped.  In SingleCapture mode the signed sum goes to `positive` and
  // `negative` is zero.
  void forward(const SpectrumWindow& window, const PhysicalParams& params, bool all_leds,
               Scratch& scratch, RealImage& positive, RealImage& negative) const;

  // Adds dL/dw (if want_weights) and dL/dP (if want_pupil) for upstream =
  // dL/dI' to `grads`.  Must follow forward() on the same scratch.
  void backward(const SpectrumWindow& window, const PhysicalParams& params,
                const RealImage& upstream, bool want_weights, bool want_pupil, Scratch& scratch,
                PhysicalGradients& grads) const;

 private:
  struct SupportPoint {
    int ky;
    int kx;
    std::size_t pupil_index;
    std::size_t work_index;
  };

  void prepare(Scratch& scratch) const;
  std::size_t fold_index(std::size_t work_index) const { return fold_[work_index]; }

  MicroscopeConfig config_;
  std::vector<Led> leds_;
  Mask support_;
  std::vector<SupportPoint> points_;
  std::size_t n_ = 0;
  std::size_t s_ = 0;
  std::size_t b_ = 0;
  std::size_t m_ = 0;
  int window_half_ = 0;
  std::vector<Complex> block_response_;  // E(jy) E(jx) on the M-grid
  std::vector<std::size_t> fold_;        // M-grid index -> sensor-grid index
  fft::Transform2D work_forward_;
  fft::Transform2D work_backward_;
  fft::Transform2D sensor_forward_;
  fft::Transform2D sensor_backward_;
};

}  // namespace lsn
