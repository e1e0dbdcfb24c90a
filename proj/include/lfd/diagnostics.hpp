#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lfd/density.hpp"
#include "lfd/initial_data.hpp"
#include "lfd/mean_field.hpp"

namespace lfd {

struct ConservedMoments {
  double mass = 0.0;
  std::vector<double> momentum;
  double energy = 0.0;
  /// integral of f |x - t v|^2.
  double inertia = 0.0;
};

ConservedMoments conserved_moments(const DensityField& f, double t);

/// One row of the time series, columns in this order.
struct DiagnosticsRecord {
  double time = 0.0;
  double mass = 0.0;
  std::vector<double> momentum;
  double kinetic_energy = 0.0;
  double inertia = 0.0;
  double entropy = 0.0;
  double dissipation_increment = 0.0;
  double cumulative_dissipation = 0.0;
  double pauli_min = 0.0;
  double pauli_max = 0.0;
  double weighted_grad_norm = 0.0;
  int picard_iters = 0;
};

/// Energy and inertia against E(t) = E(0) + c eps t m0 and I(t) = I(0) + c eps t^3/3 m0.
/// The exact constant is c = 2N (the Laplacian of |v|^2); `constant` overrides it.
struct DriftReport {
  double constant = 0.0;
  /// Deviations relative to the predicted increment.
  double energy_max_rel_dev = 0.0;
  double energy_final_rel_dev = 0.0;
  double inertia_max_rel_dev = 0.0;
  double inertia_final_rel_dev = 0.0;
  double energy_increment = 0.0;
  double energy_predicted = 0.0;
  double inertia_increment = 0.0;
  double inertia_predicted = 0.0;
};

DriftReport drift_check(const std::vector<DiagnosticsRecord>& records, double epsilon, int dim, double constant = 0.0);

/// Integral of f log f + (1 - f) log(1 - f), with 0 log 0 = 0.
double quantum_entropy(const DensityField& f);
double entropy_density(double f);

enum class ArcsinGradient {
  /// Finite differences of arcsin sqrt(f).
  difference,
  /// D f / (2 sqrt(f(1-f))), algebraically identical to the direct form.
  chain_rule,
};

/// Total dissipation D = sum over x of the (v, v*) double integral of
///   d = 4 |sqrt(a(v-v*)) (sqrt(F*) grad arcsin sqrt(f) - sqrt(F) grad* arcsin sqrt(f*))|^2,  F = f(1-f),
/// evaluated through convolutions.
double entropy_dissipation(const DensityField& f, const MeanField& engine,
                           ArcsinGradient mode = ArcsinGradient::difference);

/// The same functional in the direct form
///   (F* grad f - F grad* f*)^T a (F* grad f - F grad* f*) / (F F*),
/// as an O(M^{2N}) double loop. Needs 0 < f < 1.
double entropy_dissipation_direct(const DensityField& f, const KernelTable& table, int stencil_order);

struct EntropyReport {
  /// max over records of S(t) + weight * int_0^t D - S(0).
  double max_slack = 0.0;
  double initial_entropy = 0.0;
  double weight = 1.0;
};

EntropyReport entropy_inequality_check(const std::vector<DiagnosticsRecord>& records, double weight = 1.0);

/// integral of e^{alpha q} |grad_v f|^2 with q = |x|^2 + |v|^2.
double weighted_gradient_norm(const DensityField& f, const EnvelopeSpec& env, int stencil_order = 2);

/// Builds the time series step by step. The dissipation is recomputed every
/// `dissipation_stride` steps and held in between; the cumulative integral is trapezoidal.
class DiagnosticsRecorder {
 public:
  DiagnosticsRecorder(const MeanField& engine, EnvelopeSpec weight, int dissipation_stride = 1,
                      ArcsinGradient mode = ArcsinGradient::difference);

  const DiagnosticsRecord& record(const DensityField& f, double pauli_min, double pauli_max, int picard_iters,
                                  int step);
  const std::vector<DiagnosticsRecord>& records() const { return records_; }
  /// Continue a series whose last row is `last`, with dissipation rate `rate` at that row.
  void resume_from(const DiagnosticsRecord& last, double rate);
  /// Dissipation rate D at every record.
  const std::vector<double>& rates() const { return rates_; }

 private:
  const MeanField& engine_;
  EnvelopeSpec weight_;
  int stride_;
  ArcsinGradient mode_;
  std::vector<DiagnosticsRecord> records_;
  std::vector<double> rates_;
};

/// Smooth test function phi(x, v) with its v-gradient, v-Hessian and x-gradient.
struct TestFunction {
  std::string name;
  std::function<double(const Point& x, const Point& v)> value;
  std::function<void(const Point& x, const Point& v, double* grad_v, double* hess_v, double* grad_x)> derivatives;
};

/// Five members: (1, v1, v2, v1^2, v1 v2) e^{-|v|^2/2}, times e^{-|x|^2/2} in inhomogeneous mode.
std::vector<TestFunction> default_test_pack(int dim, bool homogeneous);

struct WeakResidualReport {
  std::vector<double> residuals;
  std::vector<double> scales;
  double max_relative = 0.0;
};

/// Weak form of the regularized equation over a stored trajectory (states at
/// t_0 < ... < t_K), with trapezoidal time quadrature:
///   int f(T) phi - int f(0) phi - int int f v.grad_x phi
///     = int int [ f abar : hess phi + f (div abar + btilde (1-f)) . grad phi + eps f lap phi ].
/// The relative residual divides by int f(0)|phi| + the time integral of the absolute integrands.
WeakResidualReport weak_residual(const std::vector<DensityField>& trajectory, const MeanField& engine, double epsilon,
                                 const std::vector<TestFunction>& pack);

}  // namespace lfd
