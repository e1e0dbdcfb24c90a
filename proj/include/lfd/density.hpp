#pragma once

#include <span>
#include <vector>

#include "lfd/phase_grid.hpp"

namespace lfd {

/// Occupation number f(t, x, v) sampled on a phase grid, one value per phase
/// node in the grid's x-major order.
struct DensityField {
  PhaseGrid grid;
  std::vector<double> samples;
  double time = 0.0;

  explicit DensityField(PhaseGrid g, double t = 0.0) : grid(std::move(g)), samples(grid.size(), 0.0), time(t) {}
  DensityField(PhaseGrid g, std::vector<double> values, double t) : grid(std::move(g)), samples(std::move(values)), time(t) {
    if (samples.size() != grid.size()) throw ValidationError("density field: sample count does not match grid");
  }

  std::span<double> slice(std::size_t ix) {
    return {samples.data() + ix * grid.velocity_size(), grid.velocity_size()};
  }
  std::span<const double> slice(std::size_t ix) const {
    return {samples.data() + ix * grid.velocity_size(), grid.velocity_size()};
  }
  double mass() const { return integrate(grid, samples); }
};

/// Throws ValidationError when any sample lies outside [0, 1].
void require_pauli_bound(std::span<const double> samples, const char* what);

}  // namespace lfd
