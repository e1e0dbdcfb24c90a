#pragma once

#include <span>
#include <vector>

#include "lfd/collision_kernel.hpp"
#include "lfd/convolution.hpp"
#include "lfd/density.hpp"
#include "lfd/stencil.hpp"

namespace lfd {

/// Nonlocal coefficients at every phase node.
///
///   a_bar     = a * (f(1-f))             packed symmetric, nsym per node
///   b_bar     = (div a) * f              N per node
///   div_a_bar = (div a) * (f(1-f))       N per node
///   div_b_bar = sum_i (div a)_i * d_i f  1 per node
///
/// All convolutions carry the velocity cell volume h^N. Layout is x-major,
/// then component, then velocity node: value(ix, c, v) = data[(ix * C + c) * Nv + v].
struct CoefficientFields {
  int dim = 2;
  std::size_t spatial_size = 0;
  std::size_t velocity_size = 0;
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> div_a_bar;
  std::vector<double> div_b_bar;

  Matrix a_bar_at(std::size_t ix, std::size_t iv) const;
  Vector b_bar_at(std::size_t ix, std::size_t iv) const;
  Vector div_a_bar_at(std::size_t ix, std::size_t iv) const;
};

/// Convolution engine bound to a kernel table: precomputes the spectra of
/// every tabulated kernel component once.
class MeanField {
 public:
  MeanField(const KernelTable& table, int stencil_order);

  const KernelTable& table() const { return table_; }
  const Convolver& convolver() const { return convolver_; }
  int stencil_order() const { return order_; }
  int dim() const { return table_.dim(); }
  /// Velocity gradient matrices of the engine's stencil order.
  const std::vector<SparseMatrix>& gradients() const { return gradient_; }

  /// a * G with G = f(1-f) (or any weight); out has nsym * Nv entries.
  void a_bar(std::span<const double> weight, std::span<double> out) const;
  /// (div a) * field; out has N * Nv entries.
  void div_convolution(std::span<const double> field, std::span<double> out) const;
  /// sum_i (div a)_i * (d_i field); out has Nv entries.
  void div_dot_gradient(std::span<const double> field, std::span<double> out) const;
  /// sum_j a_ij * (d_j field): the lattice form of b_bar used by the flux
  /// discretization (equal to (div a) * f in the continuum). out has N * Nv entries.
  void a_times_gradient(std::span<const double> field, std::span<double> out) const;
  /// (sqrt a) * weight, packed symmetric.
  void sqrt_convolution(std::span<const double> weight, std::span<double> out) const;
  /// Plain a * w for an arbitrary vector-valued field w (N * Nv): out_i = sum_j a_ij * w_j.
  void a_times_vector_field(std::span<const double> field, std::span<double> out) const;

 private:
  KernelTable table_;
  Convolver convolver_;
  std::vector<SparseMatrix> gradient_;
  int order_;
  std::vector<Spectrum> a_spec_;
  std::vector<Spectrum> div_spec_;
  std::vector<Spectrum> sqrt_spec_;
};

/// FFT path.
CoefficientFields coefficient_fields(const DensityField& f, const MeanField& engine);

/// Direct O(M^{2N}) summation over the table; the reference the FFT path is checked against.
CoefficientFields coefficient_fields_direct(const DensityField& f, const KernelTable& table, int stencil_order);

struct ProbeConfig {
  double alpha = 0.05;
  double mu = 0.9;
  /// Radius R of the sampled velocities.
  double radius = 1.0;
  int samples = 256;
};

/// Quasi-ellipticity diagnostics. The truncation set is
/// V(v, mu, eta) = { v* : (v - v*)/|v - v*| . eta <= mu, |v*| <= 1/(1-mu) }.
struct EllipticityProbe {
  double alpha = 0.0;
  double mu = 0.0;
  double radius = 0.0;
  double radius_prime = 0.0;
  std::vector<std::size_t> sample_nodes;
  std::vector<Vector> sample_directions;
  /// rho(x) = integral of G over v; one per spatial node.
  std::vector<double> rho;
  /// rho_mu(x, v_s, eta_s), x-major.
  std::vector<double> rho_mu;
  std::vector<char> k_alpha_mask;
  double k_alpha_fraction = 0.0;
  bool k_alpha_empty = true;
  /// min over samples in K_alpha of eta.a_bar(v)eta / rho_mu (NaN when K_alpha is empty).
  double nu_estimate = 0.0;
  /// Lower bound used for the discrete ellipticity inequality and its minimal slack
  /// over all samples: eta.a_bar eta - nu_floor * rho_sym >= 0 must hold.
  double nu_floor = 0.0;
  double floor_min_slack = 0.0;
};

/// rho_mu at one (v, eta) for a velocity slice G.
double truncated_density(const VelocityGrid& grid, std::span<const double> g, const Point& v, const Vector& eta,
                         double mu, std::size_t skip_node = static_cast<std::size_t>(-1));

EllipticityProbe ellipticity_probe(const DensityField& f, const MeanField& engine, const ProbeConfig& config);

}  // namespace lfd
