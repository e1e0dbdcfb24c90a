#include "lfd/density.hpp"

#include <cmath>
#include <string>

namespace lfd {

void require_pauli_bound(std::span<const double> samples, const char* what) {
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double v = samples[k];
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError(std::string(what) + ": sample " + std::to_string(k) + " = " + std::to_string(v) +
                            " outside [0, 1]");
  }
}

}  // namespace lfd
