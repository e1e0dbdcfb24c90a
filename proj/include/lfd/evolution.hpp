#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "lfd/collision_kernel.hpp"
#include "lfd/density.hpp"
#include "lfd/mean_field.hpp"
#include "lfd/stencil.hpp"

namespace lfd {

enum class Splitting { strang, lie };

/// Clamp applied to g before taking log(g / (1 - g)).
inline constexpr double kLogitFloor = 1e-300;
inline constexpr double kDefaultLogitScale = 1e-8;

struct SolverConfig {
  double epsilon = 0.05;
  double dt = 1e-3;
  double t_end = 0.5;
  double picard_tol = 1e-12;
  int picard_max_iters = 50;
  /// f^{k+1} <- theta fhat + (1 - theta) f^k.
  double relaxation = 1.0;
  int kernel_index = 8;
  /// Optional (epsilon_k, n_k) sequence for convergence studies.
  std::vector<std::pair<double, int>> viscosity_ladder;
  Splitting splitting = Splitting::strang;
  /// Velocity gradient stencil order (2 or 4).
  int stencil_order = 4;
  double linear_tol = 1e-14;
  int linear_max_iters = 2000;
  /// Clamp every substep result to [0, 1]. When off, undershoots are kept (and
  /// still reported); coefficients always see the clamped values.
  bool clamp = true;

  void validate() const;
};

/// Sparsity pattern of the frozen collision operator on one velocity slice,
/// with a linear map from the coefficient fields to the matrix values.
///
/// For a frozen g the collision term is Q = -sum_i D_i^T J_i with
///   J = abar (D f + X - D g) - btilde g (1 - f),
///   X = chi F D log(g / (1 - g)) + (1 - chi) D g,  chi = F^2 / (F^2 + tau^2),
///   F = g (1 - g),  abar = a * F,  btilde = a * X.
/// X is the lattice form of D g, so btilde stands in for (div a) * g. At the
/// fixed point f = g the flux is J = (a * F) X - (a * X) F, antisymmetric in
/// (v, v*) for any X, and zero on discrete Fermi-Dirac states wherever chi = 1. Split into an operator and a constant:
///   L f = -sum_ij D_i^T (abar_ij D_j f) - sum_i D_i^T (u_i f) + eps Lap f,  u_i = btilde_i g,
///   c   = sum_i D_i^T (u_i - sum_j abar_ij (X_j - D_j g)).
class OperatorPattern {
 public:
  OperatorPattern(const VelocityGrid& grid, int stencil_order);

  const VelocityGrid& grid() const { return grid_; }
  int stencil_order() const { return order_; }
  const std::vector<SparseMatrix>& gradients() const { return gradient_; }
  /// Number of coefficient entries per slice: (nsym + N) * Nv.
  std::size_t field_size() const { return field_size_; }
  /// Operator values for the given fields; shares the pattern of `structure()`.
  Eigen::VectorXd values(const Eigen::VectorXd& fields, double epsilon) const;
  const SparseMatrix& structure() const { return structure_; }
  const Eigen::VectorXd& identity_values() const { return identity_; }

 private:
  VelocityGrid grid_;
  int order_;
  std::size_t field_size_;
  std::vector<SparseMatrix> gradient_;
  SparseMatrix structure_;
  SparseMatrix map_;
  Eigen::VectorXd laplacian_;
  Eigen::VectorXd identity_;
};

/// Frozen operator for every x node: coefficients from g, shared pattern.
struct FrozenOperator {
  std::shared_ptr<const OperatorPattern> pattern;
  double epsilon = 0.0;
  std::size_t spatial_size = 0;
  /// Per x node: (abar packed symmetric, then u = btilde g), component-major.
  std::vector<Eigen::VectorXd> fields;
  std::vector<Eigen::VectorXd> constant;

  SparseMatrix matrix(std::size_t ix) const;
  /// L f + c on one slice.
  Eigen::VectorXd apply(std::size_t ix, const Eigen::VectorXd& f) const;
};

/// Kernel engine plus operator pattern, reused across all steps.
class CollisionModel {
 public:
  /// logit_scale: F level below which X falls back to D g (0 keeps the logit form everywhere).
  CollisionModel(const KernelTable& table, int stencil_order, double logit_scale = kDefaultLogitScale);

  const MeanField& mean_field() const { return engine_; }
  const KernelTable& table() const { return engine_.table(); }
  std::shared_ptr<const OperatorPattern> pattern() const { return pattern_; }
  int stencil_order() const { return engine_.stencil_order(); }

  /// Coefficient entries of one slice for a frozen g.
  void slice_fields(std::span<const double> g, Eigen::VectorXd& fields, Eigen::VectorXd& constant) const;

 private:
  MeanField engine_;
  std::shared_ptr<const OperatorPattern> pattern_;
  double logit_scale_;
  double logit_shift_;
};

FrozenOperator assemble_frozen(const DensityField& g, const CollisionModel& model, double epsilon);

struct SubstepReport {
  double pre_clamp_min = 0.0;
  double pre_clamp_max = 0.0;
  /// Quadrature mass removed or added by clamping.
  double clamped_mass = 0.0;
  int linear_iterations = 0;
  double linear_residual = 0.0;
};

/// Implicit Euler: (I - dt L) f' = f + dt c, one solve per x node, then clamp to [0, 1] if cfg.clamp.
DensityField parabolic_substep(const DensityField& f, const FrozenOperator& op, double dt, const SolverConfig& cfg,
                               SubstepReport* report = nullptr, const DensityField* guess = nullptr);

struct PicardReport {
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<double> residuals;
  std::vector<double> contraction_ratios;
  SubstepReport substep;
};

/// Fixed point of g -> parabolic_substep(f_prev, assemble_frozen(g)). Throws
/// RuntimeFailure with the residual history when the cap is reached.
std::pair<DensityField, PicardReport> picard_fixed_point(const DensityField& f_prev, const CollisionModel& model,
                                                         const SolverConfig& cfg);

struct TransportReport {
  /// Mass lost through the boundary of a truncated box.
  double leaked_mass = 0.0;
  double pre_clamp_min = 0.0;
  double pre_clamp_max = 0.0;
  double clamped_mass = 0.0;
};

/// Free transport f(x, v) <- f(x - v dt, v) by four-point Lagrange
/// interpolation along each x axis. Identity in homogeneous mode. The
/// interpolation reproduces cubics, so mass, momentum and the co-moving
/// second moments are preserved exactly as long as nothing is clamped.
DensityField transport_step(const DensityField& f, double dt, TransportReport* report = nullptr, bool clamp = true);

struct StepReport {
  PicardReport picard;
  TransportReport transport;
};

/// One splitting step; time advances by dt.
DensityField advance(const DensityField& f, const CollisionModel& model, const SolverConfig& cfg,
                     StepReport* report = nullptr);

using StepObserver = std::function<void(const DensityField&, const StepReport&, int step)>;

/// Steps from f0.time to cfg.t_end, calling `observer` after every step.
DensityField run_trajectory(const SolverConfig& cfg, const DensityField& f0, const CollisionModel& model,
                            const StepObserver& observer = nullptr);

/// Number of steps of size dt from t0 to t_end (rounded to the nearest integer).
int step_count(double t0, double t_end, double dt);

}  // namespace lfd
