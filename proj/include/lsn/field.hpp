#pragma once

#include <cstddef>

#include "lsn/array2d.hpp"

namespace lsn {

enum class Plane { Object, Fourier };

// Square power-of-two complex array tagged with the plane it lives in.
// Fourier-plane fields are stored DC-centred: frequency (ky, kx) sits at
// index (ky + n/2, kx + n/2).  Object-plane fields use the same centring
// for spatial coordinates.
class ComplexField {
 public:
  ComplexField() = default;
  // Throws UnsupportedSizeError for non-square or non-power-of-two arrays and
  // ValidationError for non-finite entries.
  ComplexField(Array2D<Complex> values, Plane plane);

  static ComplexField zeros(std::size_t n, Plane plane);

  std::size_t size() const { return values_.rows(); }
  Plane plane() const { return plane_; }
  const Array2D<Complex>& values() const { return values_; }
  const Complex& operator()(std::size_t r, std::size_t c) const { return values_(r, c); }

  double energy() const;

 private:
  Array2D<Complex> values_;
  Plane plane_ = Plane::Object;
};

}  // namespace lsn
