#include "lsn/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <new>
#include <string>
#include <utility>

#include "lsn/error.hpp"

namespace lsn {

ComplexField::ComplexField(Array2D<Complex> values, Plane plane)
    : values_(std::move(values)), plane_(plane) {
  if (!values_.is_square() || !fft::is_power_of_two(values_.rows())) {
    throw UnsupportedSizeError("complex field must be square with a power-of-two side, got " +
                               std::to_string(values_.rows()) + "x" +
                               std::to_string(values_.cols()));
  }
  for (const Complex& v : values_) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw ValidationError("complex field contains non-finite values");
    }
  }
}

ComplexField ComplexField::zeros(std::size_t n, Plane plane) {
  return ComplexField(Array2D<Complex>::square(n), plane);
}

double ComplexField::energy() const {
  double e = 0.0;
  for (const Complex& v : values_) e += std::norm(v);
  return e;
}

namespace fft {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

AlignedBuffer::AlignedBuffer(std::size_t count) : size_(count) {
  auto* p = static_cast<Complex*>(fftw_malloc(sizeof(Complex) * (count == 0 ? 1 : count)));
  if (p == nullptr) throw std::bad_alloc();
  data_.reset(p);
  fill(Complex{});
}

void AlignedBuffer::Free::operator()(Complex* p) const { fftw_free(p); }

void AlignedBuffer::fill(Complex value) {
  for (std::size_t i = 0; i < size_; ++i) data_[i] = value;
}

namespace {

// FFTW planning is not thread-safe; execution of an existing plan is.
// FFTW_ESTIMATE keeps plan choice, and therefore rounding, deterministic
// across processes.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_plan shared_plan(std::size_t n, Direction direction) {
  static std::map<std::pair<std::size_t, int>, fftw_plan> plans;
  const int sign = direction == Direction::Forward ? FFTW_FORWARD : FFTW_BACKWARD;
  std::lock_guard lock(planner_mutex());
  auto it = plans.find({n, sign});
  if (it != plans.end()) return it->second;
  auto* scratch = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n * n));
  fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), scratch, scratch,
                                    sign, FFTW_ESTIMATE);
  fftw_free(scratch);
  if (plan == nullptr) throw Error("FFTW failed to create a plan");
  plans.emplace(std::make_pair(n, sign), plan);
  return plan;
}

void require_power_of_two(std::size_t n) {
  if (!is_power_of_two(n)) {
    throw UnsupportedSizeError("FFT size must be a power of two, got " + std::to_string(n));
  }
}

}  // namespace

Transform2D::Transform2D(std::size_t n, Direction direction)
    : n_(n), plan_(nullptr) {
  require_power_of_two(n);
  plan_ = shared_plan(n, direction);
}

void Transform2D::execute(AlignedBuffer& buffer) const {
  if (buffer.size() != n_ * n_) throw ShapeError("transform buffer has wrong size");
  auto* p = reinterpret_cast<fftw_complex*>(buffer.data());
  fftw_execute_dft(static_cast<fftw_plan>(plan_), p, p);
}

void centered_transform(Array2D<Complex>& values, Direction direction) {
  if (!values.is_square()) throw ShapeError("centred transform requires a square array");
  const std::size_t n = values.rows();
  require_power_of_two(n);
  Transform2D transform(n, direction);
  thread_local AlignedBuffer buffer;
  if (buffer.size() != n * n) buffer = AlignedBuffer(n * n);
  std::memcpy(static_cast<void*>(buffer.data()), values.data(), sizeof(Complex) * n * n);
  if (n > 1) fftshift(buffer.span(), n);
  transform.execute(buffer);
  if (n > 1) fftshift(buffer.span(), n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n * n; ++i) values[i] = buffer[i] * scale;
}

ComplexField fft2(const ComplexField& field) {
  Array2D<Complex> values = field.values();
  centered_transform(values, Direction::Forward);
  return ComplexField(std::move(values), Plane::Fourier);
}

ComplexField ifft2(const ComplexField& spectrum) {
  Array2D<Complex> values = spectrum.values();
  centered_transform(values, Direction::Backward);
  return ComplexField(std::move(values), Plane::Object);
}

}  // namespace fft
}  // namespace lsn
