#pragma once

#include <cstddef>
#include <memory>
#include <span>

#include "lsn/array2d.hpp"
#include "lsn/field.hpp"

namespace lsn::fft {

enum class Direction { Forward, Backward };

bool is_power_of_two(std::size_t n);

// SIMD-aligned complex buffer. Transform2D::execute only accepts memory from
// one of these.
class AlignedBuffer {
 public:
  AlignedBuffer() = default;
  explicit AlignedBuffer(std::size_t count);

  Complex* data() { return data_.get(); }
  const Complex* data() const { return data_.get(); }
  std::size_t size() const { return size_; }
  std::span<Complex> span() { return {data_.get(), size_}; }
  std::span<const Complex> span() const { return {data_.get(), size_}; }
  Complex& operator[](std::size_t i) { return data_[i]; }
  const Complex& operator[](std::size_t i) const { return data_[i]; }
  void fill(Complex value);

 private:
  struct Free {
    void operator()(Complex* p) const;
  };
  std::unique_ptr<Complex[], Free> data_;
  std::size_t size_ = 0;
};

// In-place, unnormalised, uncentred n x n DFT with FFTW sign conventions
// (Forward: exp(-2 pi i k.x / n)).  Plans are created once per (n, direction)
// and shared; execute() is safe to call concurrently on distinct buffers.
class Transform2D {
 public:
  Transform2D(std::size_t n, Direction direction);

  std::size_t n() const { return n_; }
  void execute(AlignedBuffer& buffer) const;

 private:
  std::size_t n_;
  void* plan_;
};

// Swap quadrants of an even-sized square array (fftshift == ifftshift).
template <typename T>
void fftshift(std::span<T> data, std::size_t n) {
  const std::size_t h = n / 2;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t c2 = (c + h) % n;
      std::swap(data[r * n + c], data[(r + h) * n + c2]);
    }
  }
}

// Unitary (1/sqrt(N) per direction), DC-centred transforms.  Throw
// UnsupportedSizeError for non-power-of-two sizes.
ComplexField fft2(const ComplexField& field);
ComplexField ifft2(const ComplexField& spectrum);

// Same as above on raw centred arrays, in place.
void centered_transform(Array2D<Complex>& values, Direction direction);

}  // namespace lsn::fft
