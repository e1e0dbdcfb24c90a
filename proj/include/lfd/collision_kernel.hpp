#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "lfd/phase_grid.hpp"

namespace lfd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Power-law cross section Gamma(s) = s^(gamma+2).
struct CrossSectionSpec {
  int dim = 2;
  double gamma = -3.0;
  /// Declared exponent r > N/(N-1) of the L^r + L^inf split of Gamma.
  double integrability_exponent = 0.0;
  /// False when no r > N/(N-1) with Gamma in L^r near 0 exists (e.g. N = 2, gamma = -3).
  bool split_hypothesis_holds = true;

  /// Validates gamma in [-3, 0) and local integrability gamma + 2 > -N.
  /// The L^r split exponent is recorded, not enforced.
  static CrossSectionSpec power_law(int dim, double gamma);

  double exponent() const { return gamma + 2.0; }
  /// Lower-bound witness K_R of Gamma on the ball of radius R:
  /// (2R)^(gamma+2) when Gamma is non-increasing, 0 otherwise (no positive
  /// witness exists when Gamma vanishes at the origin).
  double ellipticity_floor(double radius) const;
  bool has_positive_floor() const { return exponent() <= 0.0; }
};

/// Gamma(s) = s^(gamma+2); s must be positive.
double gamma_cross_section(double s, const CrossSectionSpec& spec);

/// Regularization index n together with the fixed mollifier and cutoff profiles.
///
/// Mollifier: eta_n(z) = n^N c exp(-1/(1-|nz|^2)) on |z| < 1/n, unit mass.
/// Cutoff:    psi_n(z) = exp(-|z|^2 / (2 n^2)).
class KernelConfig {
 public:
  KernelConfig(int dim, int n);

  int dim() const { return dim_; }
  int n() const { return n_; }
  double mollifier_width() const { return 1.0 / n_; }
  double cutoff_scale() const { return static_cast<double>(n_); }
  /// eta_n at radius r.
  double mollifier(double r) const;
  /// psi_n at radius r.
  double cutoff(double r) const;
  /// Normalization constant c of the unit-scale bump.
  double bump_normalization() const { return bump_norm_; }

 private:
  int dim_;
  int n_;
  double bump_norm_;
};

/// Surface area of the unit sphere in R^N.
double unit_sphere_area(int dim);

/// Unit-scale bump exp(-1/(1-r^2)) on r < 1 (unnormalized).
double bump_profile(double r);

/// Exact projector P(z) = I - z z^T / |z|^2; z must be nonzero.
Matrix projector(const Vector& z);

/// Regularized projector P^n(z) = (|z|^2 I - z z^T) / (|z|^2 + 1/n); zero at z = 0.
Matrix projector_regularized(const Vector& z, int n);

/// Gamma^n(|z|) = [Gamma(|.|) * eta_n](z), evaluated by radial reduction of
/// the convolution and tanh-sinh quadrature.
double mollified_cross_section(double radius, const CrossSectionSpec& spec, const KernelConfig& config);
double mollified_cross_section(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config);

/// a^n(z) = Gamma^n(z) psi^n(z) P^n(z).
Matrix kernel_matrix(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config);

/// Divergence d_j a^n_ij(z) = -(N-1) Gamma^n psi^n z / (|z|^2 + 1/n); zero at z = 0.
Vector kernel_divergence(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config);

/// The coefficient printed in the original derivation of the divergence
/// formula, -(N-3)|z|^2/(|z|^2+1/n), kept only so reports can show the mismatch.
Vector kernel_divergence_printed_coefficient(const Vector& z, const CrossSectionSpec& spec,
                                             const KernelConfig& config);

struct KernelSqrt {
  Matrix root;
  Vector divergence;
};

/// Symmetric square root of a^n(z) and its divergence d_j (sqrt a^n)_ij.
KernelSqrt kernel_sqrt(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config);

/// Number of independent entries of a symmetric N x N matrix.
constexpr int sym_size(int dim) { return dim * (dim + 1) / 2; }
/// Packed index of entry (i, j) of a symmetric matrix, row-major upper triangle.
int sym_index(int dim, int i, int j);

/// Kernel samples on the difference lattice {v - v* : v, v* nodes}, i.e.
/// displacements k h with k in [-(M-1), M-1]^N. Every field is stored
/// component-major: component c of displacement d lives at c * size() + d.
class KernelTable {
 public:
  KernelTable(const VelocityGrid& grid, const CrossSectionSpec& spec, const KernelConfig& config);

  const VelocityGrid& grid() const { return grid_; }
  const CrossSectionSpec& spec() const { return spec_; }
  const KernelConfig& config() const { return config_; }
  int dim() const { return grid_.dim(); }
  /// Points per axis of the displacement lattice, 2M - 1.
  int extent() const { return 2 * grid_.points_per_axis() - 1; }
  std::size_t size() const { return size_; }

  /// Flat displacement index for the lattice offset (in units of h).
  std::size_t index_of(const std::array<int, kMaxDim>& offset) const;
  std::array<int, kMaxDim> offset_of(std::size_t d) const;
  /// Displacement index of v_node(a) - v_node(b) for velocity nodes a, b.
  std::size_t difference_index(std::size_t a, std::size_t b) const;
  Vector displacement(std::size_t d) const;
  std::size_t negate(std::size_t d) const;

  /// Packed symmetric entries of a^n, component-major.
  const std::vector<double>& a_samples() const { return a_; }
  const std::vector<double>& div_samples() const { return div_; }
  const std::vector<double>& sqrt_samples() const { return sqrt_; }
  const std::vector<double>& sqrt_div_samples() const { return sqrt_div_; }
  const std::vector<double>& gamma_samples() const { return gamma_n_; }

  Matrix a_at(std::size_t d) const;
  Vector div_at(std::size_t d) const;
  Matrix sqrt_at(std::size_t d) const;
  Vector sqrt_div_at(std::size_t d) const;

 private:
  VelocityGrid grid_;
  CrossSectionSpec spec_;
  KernelConfig config_;
  std::size_t size_;
  std::vector<double> a_;
  std::vector<double> div_;
  std::vector<double> sqrt_;
  std::vector<double> sqrt_div_;
  std::vector<double> gamma_n_;
};

KernelTable build_kernel_table(const VelocityGrid& grid, const CrossSectionSpec& spec, const KernelConfig& config);

/// Invariant suite over a kernel table plus off-lattice finite-difference probes.
struct KernelReport {
  double psd_min_eigenvalue = 0.0;
  double max_az_residual = 0.0;
  double symmetry_residual = 0.0;
  double sqrt_residual = 0.0;
  /// Max relative error of the closed-form divergence vs centered differences at step h0.
  double divergence_fd_error = 0.0;
  double divergence_fd_order = 0.0;
  double sqrt_divergence_fd_error = 0.0;
  double sqrt_divergence_fd_order = 0.0;
  /// min over random (z, eta) of (eta a eta - floor) / max(floor, tiny); >= 0 when the floor holds.
  double ellipticity_floor_margin = 0.0;
  /// Same margin computed with the uniform constant R^2/(R^2+1/n) in place of |z|^2/(|z|^2+1/n).
  double uniform_constant_margin = 0.0;
  /// Relative error of the (N-3) coefficient against centered differences.
  double printed_coefficient_fd_error = 0.0;
  int samples = 0;
};

struct KernelCheckOptions {
  int fd_points = 20;
  int ellipticity_samples = 1000;
  double ellipticity_radius = 0.5;
  double fd_step = 0.05;
  unsigned seed = 20240611u;
};

KernelReport check_kernel_invariants(const KernelTable& table, const KernelCheckOptions& options = {});

}  // namespace lfd
