#pragma once

#include <string>
#include <vector>

#include "lfd/density.hpp"

namespace lfd {

/// Two-sided Gaussian envelope
///   L = c_lower e^{-alpha q},  U = c_upper e^{-alpha q} / (1 + c_upper e^{-alpha q}),
/// with q = |x|^2 + |v|^2 (q = |v|^2 in homogeneous mode).
struct EnvelopeSpec {
  double alpha = 1.0;
  double c_lower = 0.0;
  double c_upper = 1.0;

  double lower(double q) const;
  double upper(double q) const;
};

struct EnvelopeReport {
  std::size_t lower_violations = 0;
  std::size_t upper_violations = 0;
  /// min over nodes of min(f - L, U - f); negative when something is violated.
  double worst_margin = 0.0;
  bool passed() const { return lower_violations == 0 && upper_violations == 0; }
};

struct EnvelopeFit {
  EnvelopeSpec spec;
  /// Least-squares intercepts before any tightening.
  double raw_c_lower = 0.0;
  double raw_c_upper = 0.0;
  double raw_alpha_upper = 0.0;
  std::size_t excluded_nodes = 0;
  bool degenerate = false;
};

/// |x|^2 + |v|^2 at phase node k.
double phase_radius2(const PhaseGrid& grid, std::size_t k);

EnvelopeReport envelope_check(const DensityField& f, const EnvelopeSpec& env);

/// Least-squares fit of log f and log(f/(1-f)) against -alpha q. The returned
/// spec carries the tightest witnesses for the fitted alpha, widened by `margin`,
/// so it always passes envelope_check on its own input.
EnvelopeFit fit_envelope(const DensityField& f, double margin = 1.05);

/// f0^n = [ e^{-q}/n + (f0 * chi^n) phi^n ] / (1 + 2/n).
///
/// chi^n is a bump of radius 1/n on phase space, renormalized on the lattice;
/// phi^n is a smooth radial plateau, 1 for sqrt(q) <= n/2 and 0 beyond n.
DensityField regularize_initial_datum(const DensityField& f0, int n);

/// Smooth plateau profile used for phi^n.
double plateau_cutoff(double radius, int n);

/// Named analytic data. Parameters not used by a family are ignored.
struct AnalyticDatum {
  std::string family = "gaussian";
  double amplitude = 0.5;
  double temperature = 1.0;
  /// Drift of the first bump (the second double-gaussian bump sits at -drift).
  std::vector<double> drift;
  /// Fermi-Dirac parameters: f = 1 / (1 + e^{a + b |v - u|^2}).
  double fd_a = 1.0;
  double fd_b = 1.0;
  /// Plateau radius in v.
  double radius = 1.5;
  /// Spatial profile e^{-|x|^2 / x_width^2} in inhomogeneous mode.
  double x_width = 1.0;
};

void validate(const AnalyticDatum& datum, int dim);

DensityField make_initial_datum(const PhaseGrid& grid, const AnalyticDatum& datum);

}  // namespace lfd
