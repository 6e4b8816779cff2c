#include "lsn/sensor_imager.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lsn/error.hpp"

namespace lsn {

namespace {

std::size_t wrap(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

int support_radius(const MicroscopeConfig& config) {
  return static_cast<int>(std::floor(config.pupil_radius_px()));
}

// Smallest power of two M > 4R' (so the intensity band 2R' never aliases on
// the M-grid), capped at the full grid where the route is exact by definition.
std::size_t work_size(const MicroscopeConfig& config) {
  config.validate();
  const std::size_t limit = 4 * static_cast<std::size_t>(support_radius(config));
  std::size_t m = 2;
  while (m <= limit) m *= 2;
  return std::min(m, config.grid_n);
}

}  // namespace

SpectrumWindow::SpectrumWindow(int half, std::shared_ptr<const std::vector<Complex>> values)
    : half_(half), values_(std::move(values)) {
  const std::size_t w = static_cast<std::size_t>(2 * half_ + 1);
  if (half_ < 0 || !values_ || values_->size() != w * w) {
    throw ShapeError("spectrum window has wrong size");
  }
}

SpectrumWindow SpectrumWindow::crop(const ComplexField& spectrum, int half) {
  const std::size_t n = spectrum.size();
  const std::size_t w = static_cast<std::size_t>(2 * half + 1);
  auto values = std::make_shared<std::vector<Complex>>(w * w);
  const long h = static_cast<long>(n / 2);
  for (int ky = -half; ky <= half; ++ky) {
    const std::size_t r = wrap(ky + h, n);
    for (int kx = -half; kx <= half; ++kx) {
      (*values)[static_cast<std::size_t>(ky + half) * w + static_cast<std::size_t>(kx + half)] =
          spectrum(r, wrap(kx + h, n));
    }
  }
  return SpectrumWindow(half, std::move(values));
}

SpectrumWindow SpectrumWindow::translated(long dy, long dx, std::size_t grid_n) const {
  SpectrumWindow out = *this;
  const std::size_t w = static_cast<std::size_t>(2 * half_ + 1);
  if (out.ramp_y_.empty()) {
    out.ramp_y_.assign(w, Complex(1.0, 0.0));
    out.ramp_x_.assign(w, Complex(1.0, 0.0));
  }
  const double n = static_cast<double>(grid_n);
  for (int k = -half_; k <= half_; ++k) {
    const std::size_t i = static_cast<std::size_t>(k + half_);
    // Phases reduced mod n before scaling keep the ramp exact for large shifts.
    const double py = -2.0 * std::numbers::pi * static_cast<double>(wrap(k * dy, grid_n)) / n;
    const double px = -2.0 * std::numbers::pi * static_cast<double>(wrap(k * dx, grid_n)) / n;
    out.ramp_y_[i] *= std::polar(1.0, py);
    out.ramp_x_[i] *= std::polar(1.0, px);
  }
  return out;
}

SensorImager::SensorImager(const MicroscopeConfig& config, std::vector<Led> leds)
    : config_(config),
      leds_(std::move(leds)),
      support_(pupil_support(config)),
      n_(config.grid_n),
      s_(config.sensor_n),
      b_(config.grid_n / config.sensor_n),
      m_(work_size(config)),
      work_forward_(m_, fft::Direction::Forward),
      work_backward_(m_, fft::Direction::Backward),
      sensor_forward_(config.sensor_n, fft::Direction::Forward),
      sensor_backward_(config.sensor_n, fft::Direction::Backward) {
  if (leds_.empty()) throw ValidationError("LED list is empty");
  const int radius = support_radius(config_);
  int max_shift = 0;
  for (const Led& led : leds_) {
    max_shift = std::max({max_shift, std::abs(led.shift.x), std::abs(led.shift.y)});
  }
  window_half_ = radius + max_shift;

  const long h = static_cast<long>(n_ / 2);
  for (std::size_t r = 0; r < n_; ++r) {
    for (std::size_t c = 0; c < n_; ++c) {
      if (support_(r, c) == 0) continue;
      SupportPoint p;
      p.ky = static_cast<int>(static_cast<long>(r) - h);
      p.kx = static_cast<int>(static_cast<long>(c) - h);
      p.pupil_index = r * n_ + c;
      p.work_index = wrap(p.ky, m_) * m_ + wrap(p.kx, m_);
      points_.push_back(p);
    }
  }

  // E(j) = sum_{t<b} exp(2 pi i j t / N), the block-mean response at frequency j.
  std::vector<Complex> response(m_);
  for (std::size_t idx = 0; idx < m_; ++idx) {
    const long j = idx < m_ / 2 ? static_cast<long>(idx) : static_cast<long>(idx) - static_cast<long>(m_);
    Complex acc(0.0, 0.0);
    for (std::size_t t = 0; t < b_; ++t) {
      acc += std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(wrap(j * static_cast<long>(t), n_)) /
                                 static_cast<double>(n_));
    }
    response[idx] = acc;
  }
  block_response_.resize(m_ * m_);
  fold_.resize(m_ * m_);
  for (std::size_t ry = 0; ry < m_; ++ry) {
    const long jy = ry < m_ / 2 ? static_cast<long>(ry) : static_cast<long>(ry) - static_cast<long>(m_);
    for (std::size_t rx = 0; rx < m_; ++rx) {
      const long jx = rx < m_ / 2 ? static_cast<long>(rx) : static_cast<long>(rx) - static_cast<long>(m_);
      block_response_[ry * m_ + rx] = response[ry] * response[rx];
      fold_[ry * m_ + rx] = wrap(jy, s_) * s_ + wrap(jx, s_);
    }
  }
}

void SensorImager::prepare(Scratch& scratch) const {
  const std::size_t count = leds_.size();
  if (scratch.fields.size() != count || scratch.work.size() != m_ * m_ ||
      scratch.sensor_a.size() != s_ * s_) {
    scratch.fields.clear();
    for (std::size_t i = 0; i < count; ++i) scratch.fields.emplace_back(m_ * m_);
    scratch.folded.assign(count, std::vector<Complex>(s_ * s_));
    scratch.active.assign(count, 0);
    scratch.work = fft::AlignedBuffer(m_ * m_);
    scratch.adjoint = fft::AlignedBuffer(m_ * m_);
    scratch.sensor_a = fft::AlignedBuffer(s_ * s_);
    scratch.sensor_b = fft::AlignedBuffer(s_ * s_);
    scratch.upstream_b = fft::AlignedBuffer(s_ * s_);
  }
}

void SensorImager::forward(const SpectrumWindow& window, const PhysicalParams& params,
                           bool all_leds, Scratch& scratch, RealImage& positive,
                           RealImage& negative) const {
  if (params.led_weights.size() != leds_.size()) throw ShapeError("LED weight count mismatch");
  if (params.pupil.rows() != n_ || params.pupil.cols() != n_) {
    throw ShapeError("pupil does not match grid_n");
  }
  if (window.half() < window_half_) throw ShapeError("spectrum window too small for LED shifts");
  prepare(scratch);

  const double inv_n = 1.0 / static_cast<double>(n_);
  const bool single = config_.capture_mode == CaptureMode::SingleCapture;
  scratch.sensor_a.fill(Complex{});
  scratch.sensor_b.fill(Complex{});

  for (std::size_t i = 0; i < leds_.size(); ++i) {
    const double w = params.led_weights[i];
    scratch.active[i] = (all_leds || w != 0.0) ? 1 : 0;
    if (!scratch.active[i]) continue;
    const PixelShift s = leds_[i].shift;

    // g = F^-1[O^(k - s) P(k)] sampled on the M-grid.
    fft::AlignedBuffer& field = scratch.fields[i];
    field.fill(Complex{});
    for (const SupportPoint& p : points_) {
      const double pv = params.pupil[p.pupil_index];
      if (pv == 0.0) continue;
      field[p.work_index] = window.at(p.ky - s.y, p.kx - s.x) * pv;
    }
    work_backward_.execute(field);
    for (std::size_t j = 0; j < m_ * m_; ++j) field[j] *= inv_n;

    // Intensity spectrum, block response, fold onto the sensor grid.
    fft::AlignedBuffer& work = scratch.work;
    for (std::size_t j = 0; j < m_ * m_; ++j) work[j] = Complex(std::norm(field[j]), 0.0);
    work_forward_.execute(work);
    std::vector<Complex>& folded = scratch.folded[i];
    std::fill(folded.begin(), folded.end(), Complex{});
    for (std::size_t j = 0; j < m_ * m_; ++j) folded[fold_[j]] += work[j] * block_response_[j];

    if (w == 0.0) continue;
    if (single || w > 0.0) {
      for (std::size_t q = 0; q < s_ * s_; ++q) scratch.sensor_a[q] += w * folded[q];
    } else {
      for (std::size_t q = 0; q < s_ * s_; ++q) scratch.sensor_b[q] -= w * folded[q];
    }
  }

  const double scale = 1.0 / (static_cast<double>(b_ * b_) * static_cast<double>(m_ * m_));
  const std::size_t half_s = s_ / 2;
  auto emit = [&](fft::AlignedBuffer& spectrum, RealImage& out) {
    sensor_backward_.execute(spectrum);
    out = RealImage(s_, s_);
    for (std::size_t r = 0; r < s_; ++r) {
      for (std::size_t c = 0; c < s_; ++c) {
        out((r + half_s) % s_, (c + half_s) % s_) = spectrum[r * s_ + c].real() * scale;
      }
    }
  };
  emit(scratch.sensor_a, positive);
  emit(scratch.sensor_b, negative);
}

void SensorImager::backward(const SpectrumWindow& window, const PhysicalParams& params,
                            const RealImage& upstream, bool want_weights, bool want_pupil,
                            Scratch& scratch, PhysicalGradients& grads) const {
  if (upstream.rows() != s_ || upstream.cols() != s_) {
    throw ShapeError("upstream gradient must be sensor_n x sensor_n");
  }
  if (scratch.fields.size() != leds_.size()) throw Error("backward() called before forward()");
  if (want_weights) {
    if (grads.d_weights.size() != leds_.size()) grads.d_weights.assign(leds_.size(), 0.0);
    for (char a : scratch.active) {
      if (!a) throw Error("weight gradients need a forward pass over all LEDs");
    }
  }
  if (want_pupil && (grads.d_pupil.rows() != n_ || grads.d_pupil.cols() != n_)) {
    grads.d_pupil = RealImage(n_, n_);
  }

  const std::size_t half_s = s_ / 2;
  fft::AlignedBuffer& ub = scratch.upstream_b;
  for (std::size_t r = 0; r < s_; ++r) {
    for (std::size_t c = 0; c < s_; ++c) {
      ub[((r + half_s) % s_) * s_ + (c + half_s) % s_] = Complex(upstream(r, c), 0.0);
    }
  }
  const double bb = static_cast<double>(b_ * b_);
  const double mm = static_cast<double>(m_ * m_);
  const double nn = static_cast<double>(n_);

  if (want_pupil) {
    // Band-limited upsampling adjoint v on the M-grid:
    // V(j) = conj(E(j)) F_S[u](j mod S) / (N b^2),  v_M = F^-1_M[V] / N.
    fft::AlignedBuffer& uf = scratch.sensor_a;
    for (std::size_t q = 0; q < s_ * s_; ++q) uf[q] = ub[q];
    sensor_forward_.execute(uf);
    fft::AlignedBuffer& v = scratch.adjoint;
    const double v_scale = 1.0 / (nn * bb * nn);
    for (std::size_t j = 0; j < m_ * m_; ++j) {
      v[j] = std::conj(block_response_[j]) * uf[fold_[j]] * v_scale;
    }
    work_backward_.execute(v);

    const double y_scale = nn / mm;
    for (std::size_t i = 0; i < leds_.size(); ++i) {
      const double w = params.led_weights[i];
      if (!scratch.active[i] || w == 0.0) continue;
      const PixelShift s = leds_[i].shift;
      fft::AlignedBuffer& work = scratch.work;
      const fft::AlignedBuffer& field = scratch.fields[i];
      for (std::size_t j = 0; j < m_ * m_; ++j) work[j] = v[j] * field[j];
      work_forward_.execute(work);
      for (const SupportPoint& p : points_) {
        const Complex sv = window.at(p.ky - s.y, p.kx - s.x);
        grads.d_pupil[p.pupil_index] +=
            w * 2.0 * y_scale * (std::conj(sv) * work[p.work_index]).real();
      }
    }
  }

  if (want_weights) {
    // sum_m u(m) I_i(m) = scale * Re sum_q X_i(q) F^-1_S-unnormalised[u](q)
    sensor_backward_.execute(ub);
    const double scale = 1.0 / (bb * mm);
    for (std::size_t i = 0; i < leds_.size(); ++i) {
      const std::vector<Complex>& folded = scratch.folded[i];
      double acc = 0.0;
      for (std::size_t q = 0; q < s_ * s_; ++q) acc += (folded[q] * ub[q]).real();
      grads.d_weights[i] += scale * acc;
    }
  }
}

}  // namespace lsn
