#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lsn/array2d.hpp"
#include "lsn/field.hpp"
#include "lsn/optics.hpp"

namespace lsn {

struct PhysicalGradients {
  std::vector<double> d_weights;
  RealImage d_pupil;  // zero outside the pupil support
};

// dL/dw_i for I' = sum_i w_i D(|F^-1[O^(k - k_i) P(k)]|^2), D the sensor
// block mean, given upstream = dL/dI' on the sensor grid.  Independent of w.
std::vector<double> grad_wrt_weights(const ComplexField& object_spectrum, const RealImage& pupil,
                                     std::span<const Led> leds, const RealImage& upstream);

// dL/dP(k) for the same model, masked to params.pupil_support.
RealImage grad_wrt_pupil(const ComplexField& object_spectrum, const PhysicalParams& params,
                         std::span<const Led> leds, const RealImage& upstream);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Max over the checked coordinates of |central difference - analytic| /
// max(|analytic|, 1e-12).  An empty coordinate list checks every coordinate.
// Throws NumericError if f is not finite at a probe point.
double finite_difference_check(const ScalarFunction& f, std::span<const double> x,
                               std::span<const double> analytic, double eps,
                               std::span<const std::size_t> coordinates = {});

}  // namespace lsn
