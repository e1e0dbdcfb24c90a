#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "lfd/phase_grid.hpp"

namespace lfd {

using Spectrum = std::vector<std::complex<double>>;

/// Discrete velocity convolution out(v) = sum_{v*} K(v - v*) field(v*) via
/// zero-padded real FFTs of length 2M per axis.
///
/// K is given on the difference lattice (2M-1 points per axis, offset -(M-1)
/// first), in the layout used by KernelTable. Plans are created once; apply()
/// is safe to call concurrently from several threads.
class Convolver {
 public:
  explicit Convolver(const VelocityGrid& grid);
  ~Convolver();
  Convolver(const Convolver&) = delete;
  Convolver& operator=(const Convolver&) = delete;

  const VelocityGrid& grid() const { return grid_; }

  Spectrum kernel_spectrum(std::span<const double> kernel) const;
  Spectrum field_spectrum(std::span<const double> field) const;
  /// out(v) = sum_{v*} K(v - v*) field(v*), without any quadrature weight.
  void apply(const Spectrum& kernel, const Spectrum& field, std::span<double> out) const;

 private:
  struct Plans;
  VelocityGrid grid_;
  int padded_;
  std::size_t real_size_;
  std::size_t complex_size_;
  std::unique_ptr<Plans> plans_;
};

}  // namespace lfd
