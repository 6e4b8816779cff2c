#pragma once

// Test-only reference computations.  Deliberately naive and independent of
// the library's FFT and imaging code paths.

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "lsn/array2d.hpp"

namespace oracle {

using lsn::Array2D;
using lsn::Complex;
using lsn::RealImage;

// Centred unitary DFT by direct O(N^4) summation.  sign = -1 forward, +1 inverse.
Array2D<Complex> direct_dft(const Array2D<Complex>& f, int sign);

struct Shift {
  int x;
  int y;
};

// sum_i w_i * blockmean(|IDFT[O^(k - s_i) P(k)]|^2), everything by direct sums.
RealImage direct_weighted_intensity(const Array2D<Complex>& object, const RealImage& pupil,
                                    const std::vector<Shift>& shifts,
                                    const std::vector<double>& weights, std::size_t sensor_n);

Array2D<Complex> random_field(std::size_t n, std::mt19937_64& rng);
RealImage random_image(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0);

double max_abs(const RealImage& a);
double max_abs_diff(const RealImage& a, const RealImage& b);
// max|a - b| / max|b|
double rel_diff(const RealImage& a, const RealImage& b);

}  // namespace oracle
