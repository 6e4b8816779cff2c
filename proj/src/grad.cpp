#include "lsn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lsn/error.hpp"
#include "lsn/fft.hpp"

namespace lsn {

namespace {

std::size_t wrap(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

void check_upstream(const ComplexField& spectrum, const RealImage& upstream) {
  if (!upstream.is_square() || upstream.rows() == 0 || spectrum.size() % upstream.rows() != 0) {
    throw ShapeError("upstream gradient must be a square sensor image tiling the grid");
  }
}

}  // namespace

std::vector<double> grad_wrt_weights(const ComplexField& object_spectrum, const RealImage& pupil,
                                     std::span<const Led> leds, const RealImage& upstream) {
  if (leds.empty()) throw ValidationError("LED list is empty");
  check_upstream(object_spectrum, upstream);
  const RealImage spread = downsample_adjoint(upstream, object_spectrum.size());
  std::vector<double> grad(leds.size(), 0.0);
  for (std::size_t i = 0; i < leds.size(); ++i) {
    const RealImage intensity = coherent_intensity(object_spectrum, pupil, leds[i].shift);
    double acc = 0.0;
    for (std::size_t j = 0; j < intensity.size(); ++j) acc += spread[j] * intensity[j];
    grad[i] = acc;
  }
  return grad;
}

RealImage grad_wrt_pupil(const ComplexField& object_spectrum, const PhysicalParams& params,
                         std::span<const Led> leds, const RealImage& upstream) {
  const std::size_t n = object_spectrum.size();
  if (params.pupil.rows() != n || params.pupil.cols() != n || params.pupil_support.rows() != n ||
      params.pupil_support.cols() != n) {
    throw ShapeError("pupil does not match the spectrum grid");
  }
  if (params.led_weights.size() != leds.size()) throw ShapeError("LED weight count mismatch");
  check_upstream(object_spectrum, upstream);
  const RealImage spread = downsample_adjoint(upstream, n);

  RealImage grad(n, n);
  Array2D<Complex> shifted = Array2D<Complex>::square(n);
  Array2D<Complex> field = Array2D<Complex>::square(n);
  for (std::size_t i = 0; i < leds.size(); ++i) {
    const double w = params.led_weights[i];
    if (w == 0.0) continue;
    const PixelShift s = leds[i].shift;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t src_r = wrap(static_cast<long>(r) - s.y, n);
      for (std::size_t c = 0; c < n; ++c) {
        shifted(r, c) = object_spectrum(src_r, wrap(static_cast<long>(c) - s.x, n));
        field(r, c) = shifted(r, c) * params.pupil(r, c);
      }
    }
    // g = F^-1[S P];  dL/dP = 2 Re{ conj(S) F[v g] } with v the spread upstream.
    fft::centered_transform(field, fft::Direction::Backward);
    for (std::size_t j = 0; j < field.size(); ++j) field[j] *= spread[j];
    fft::centered_transform(field, fft::Direction::Forward);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      grad[j] += w * 2.0 * (std::conj(shifted[j]) * field[j]).real();
    }
  }
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (params.pupil_support[j] == 0) grad[j] = 0.0;
  }
  return grad;
}

double finite_difference_check(const ScalarFunction& f, std::span<const double> x,
                               std::span<const double> analytic, double eps,
                               std::span<const std::size_t> coordinates) {
  if (!(eps > 0.0)) throw ValidationError("finite-difference step must be positive");
  if (analytic.size() != x.size()) throw ShapeError("analytic gradient size mismatch");
  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(i);
  }
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw ValidationError("coordinate out of range");
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("function is not finite around coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace lsn
