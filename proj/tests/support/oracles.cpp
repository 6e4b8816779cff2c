#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace oracle {

Array2D<Complex> direct_dft(const Array2D<Complex>& f, int sign) {
  const std::size_t n = f.rows();
  const long h = static_cast<long>(n / 2);
  Array2D<Complex> out(n, n);
  const double norm = 1.0 / static_cast<double>(n);
  for (std::size_t kr = 0; kr < n; ++kr) {
    for (std::size_t kc = 0; kc < n; ++kc) {
      Complex acc(0.0, 0.0);
      const long ky = static_cast<long>(kr) - h;
      const long kx = static_cast<long>(kc) - h;
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          const long y = static_cast<long>(r) - h;
          const long x = static_cast<long>(c) - h;
          const double phase = sign * 2.0 * std::numbers::pi *
                               static_cast<double>(ky * y + kx * x) / static_cast<double>(n);
          acc += f(r, c) * std::polar(1.0, phase);
        }
      }
      out(kr, kc) = acc * norm;
    }
  }
  return out;
}

RealImage direct_weighted_intensity(const Array2D<Complex>& object, const RealImage& pupil,
                                    const std::vector<Shift>& shifts,
                                    const std::vector<double>& weights, std::size_t sensor_n) {
  const std::size_t n = object.rows();
  const Array2D<Complex> spectrum = direct_dft(object, -1);
  RealImage total(n, n);
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    Array2D<Complex> g(n, n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const long sr = ((static_cast<long>(r) - shifts[i].y) % static_cast<long>(n) + static_cast<long>(n)) %
                        static_cast<long>(n);
        const long sc = ((static_cast<long>(c) - shifts[i].x) % static_cast<long>(n) + static_cast<long>(n)) %
                        static_cast<long>(n);
        g(r, c) = spectrum(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)) * pupil(r, c);
      }
    }
    const Array2D<Complex> field = direct_dft(g, +1);
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += weights[i] * std::norm(field[j]);
  }
  const std::size_t b = n / sensor_n;
  RealImage out(sensor_n, sensor_n);
  for (std::size_t r = 0; r < sensor_n; ++r) {
    for (std::size_t c = 0; c < sensor_n; ++c) {
      double acc = 0.0;
      for (std::size_t dr = 0; dr < b; ++dr) {
        for (std::size_t dc = 0; dc < b; ++dc) acc += total(r * b + dr, c * b + dc);
      }
      out(r, c) = acc / static_cast<double>(b * b);
    }
  }
  return out;
}

Array2D<Complex> random_field(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Array2D<Complex> f(n, n);
  for (auto& v : f) v = Complex(u(rng), u(rng));
  return f;
}

RealImage random_image(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  RealImage f(n, n);
  for (auto& v : f) v = u(rng);
  return f;
}

double max_abs(const RealImage& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const RealImage& a, const RealImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_diff(const RealImage& a, const RealImage& b) {
  const double scale = max_abs(b);
  return scale == 0.0 ? max_abs(a) : max_abs_diff(a, b) / scale;
}

}  // namespace oracle
