#include "lfd/convolution.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>

namespace lfd {

namespace {

// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct RealBuffer {
  explicit RealBuffer(std::size_t n) : data(fftw_alloc_real(n)), size(n) { std::fill(data, data + n, 0.0); }
  ~RealBuffer() { fftw_free(data); }
  RealBuffer(const RealBuffer&) = delete;
  RealBuffer& operator=(const RealBuffer&) = delete;
  double* data;
  std::size_t size;
};

struct ComplexBuffer {
  explicit ComplexBuffer(std::size_t n) : data(fftw_alloc_complex(n)), size(n) {}
  ~ComplexBuffer() { fftw_free(data); }
  ComplexBuffer(const ComplexBuffer&) = delete;
  ComplexBuffer& operator=(const ComplexBuffer&) = delete;
  fftw_complex* data;
  std::size_t size;
};

}  // namespace

struct Convolver::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~Plans() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

Convolver::Convolver(const VelocityGrid& grid)
    : grid_(grid), padded_(2 * grid.points_per_axis()), plans_(std::make_unique<Plans>()) {
  const int dim = grid.dim();
  real_size_ = 1;
  complex_size_ = 1;
  int dims[kMaxDim];
  for (int a = 0; a < dim; ++a) {
    dims[a] = padded_;
    real_size_ *= padded_;
    complex_size_ *= (a == dim - 1) ? (padded_ / 2 + 1) : padded_;
  }
  RealBuffer r(real_size_);
  ComplexBuffer c(complex_size_);
  std::lock_guard<std::mutex> lock(planner_mutex());
  plans_->forward = fftw_plan_dft_r2c(dim, dims, r.data, c.data, FFTW_ESTIMATE);
  plans_->backward = fftw_plan_dft_c2r(dim, dims, c.data, r.data, FFTW_ESTIMATE);
  if (!plans_->forward || !plans_->backward) throw RuntimeFailure("convolver: FFTW planning failed");
}

Convolver::~Convolver() = default;

Spectrum Convolver::kernel_spectrum(std::span<const double> kernel) const {
  const int dim = grid_.dim();
  const int ext = 2 * grid_.points_per_axis() - 1;
  std::size_t expected = 1;
  for (int a = 0; a < dim; ++a) expected *= ext;
  if (kernel.size() != expected) throw ValidationError("convolver: kernel size mismatch");
  RealBuffer r(real_size_);
  // Difference-lattice index k' in [0, 2M-2] maps to padded position k'.
  for (std::size_t d = 0; d < expected; ++d) {
    std::size_t rem = d, pos = 0, scale = 1;
    for (int a = dim - 1; a >= 0; --a) {
      pos += (rem % ext) * scale;
      rem /= ext;
      scale *= padded_;
    }
    r.data[pos] = kernel[d];
  }
  ComplexBuffer c(complex_size_);
  fftw_execute_dft_r2c(plans_->forward, r.data, c.data);
  Spectrum out(complex_size_);
  std::memcpy(static_cast<void*>(out.data()), c.data, complex_size_ * sizeof(fftw_complex));
  return out;
}

Spectrum Convolver::field_spectrum(std::span<const double> field) const {
  const int dim = grid_.dim();
  const int m = grid_.points_per_axis();
  if (field.size() != grid_.size()) throw ValidationError("convolver: field size mismatch");
  RealBuffer r(real_size_);
  for (std::size_t k = 0; k < field.size(); ++k) {
    std::size_t rem = k, pos = 0, scale = 1;
    for (int a = dim - 1; a >= 0; --a) {
      pos += (rem % m) * scale;
      rem /= m;
      scale *= padded_;
    }
    r.data[pos] = field[k];
  }
  ComplexBuffer c(complex_size_);
  fftw_execute_dft_r2c(plans_->forward, r.data, c.data);
  Spectrum out(complex_size_);
  std::memcpy(static_cast<void*>(out.data()), c.data, complex_size_ * sizeof(fftw_complex));
  return out;
}

void Convolver::apply(const Spectrum& kernel, const Spectrum& field, std::span<double> out) const {
  if (kernel.size() != complex_size_ || field.size() != complex_size_ || out.size() != grid_.size())
    throw ValidationError("convolver: spectrum or output size mismatch");
  ComplexBuffer c(complex_size_);
  for (std::size_t k = 0; k < complex_size_; ++k) {
    const std::complex<double> v = kernel[k] * field[k];
    c.data[k][0] = v.real();
    c.data[k][1] = v.imag();
  }
  RealBuffer r(real_size_);
  fftw_execute_dft_c2r(plans_->backward, c.data, r.data);
  const int dim = grid_.dim();
  const int m = grid_.points_per_axis();
  const double norm = 1.0 / static_cast<double>(real_size_);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t rem = k, pos = 0, scale = 1;
    for (int a = dim - 1; a >= 0; --a) {
      pos += (rem % m + (m - 1)) * scale;
      rem /= m;
      scale *= padded_;
    }
    out[k] = r.data[pos] * norm;
  }
}

}  // namespace lfd
