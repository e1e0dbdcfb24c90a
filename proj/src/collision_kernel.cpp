#include "lfd/collision_kernel.hpp"

#include <algorithm>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>

namespace lfd {

namespace {

constexpr double kQuadTol = 1e-14;

// Nested integrals use separate integrators: tanh_sinh extends its abscissa
// tables lazily, so one object must not be re-entered.
template <int Level>
double integrate_tanh_sinh(const auto& f, double a, double b) {
  static thread_local boost::math::quadrature::tanh_sinh<double> integrator(18);
  if (!(b > a)) return 0.0;
  return integrator.integrate(f, a, b, kQuadTol);
}

// Spherical integral of |z - rho w|^p over w on the unit sphere, |z| = r.
double sphere_average(int dim, double r, double rho, double p) {
  const double big = std::max(r, rho);
  const double small = std::min(r, rho);
  if (big == 0.0) return p == 0.0 ? unit_sphere_area(dim) : 0.0;
  if (small == 0.0) return unit_sphere_area(dim) * std::pow(big, p);
  if (p == 0.0) return unit_sphere_area(dim);
  const double t = small / big;
  if (dim == 3) {
    // 2 pi / (r rho q) [(r+rho)^q - |r-rho|^q], q = p + 2, written in t = small/big.
    const double q = p + 2.0;
    const double diff = std::expm1(q * std::log1p(t)) - std::expm1(q * std::log1p(-t));
    return 2.0 * std::numbers::pi * std::pow(big, p) * diff / (t * q);
  }
  // N = 2: 4 (r+rho)^p int_0^{pi/2} (1 - k^2 sin^2 phi)^{p/2} dphi, k = 2 sqrt(r rho)/(r+rho).
  const double sum = r + rho;
  const double k = 2.0 * std::sqrt(r * rho) / sum;
  if (p == -1.0) {
    // Log singularity at r = rho; near it use K(k) ~ log(4 / k'), k' = |r - rho| / (r + rho).
    const double kc = std::abs(r - rho) / sum;
    if (kc < 1e-7) return 4.0 * std::log(4.0 / std::max(kc, 1e-300)) / sum;
    return 4.0 * std::comp_ellint_1(k) / sum;
  }
  const double k2 = k * k;
  const double inner = integrate_tanh_sinh<1>(
      [&](double phi) {
        const double s = std::sin(phi);
        return std::pow(std::max(1.0 - k2 * s * s, 0.0), 0.5 * p);
      },
      0.0, 0.5 * std::numbers::pi);
  return 4.0 * std::pow(sum, p) * inner;
}

double bump_moment(int dim) {
  return integrate_tanh_sinh<0>([dim](double u) { return bump_profile(u) * std::pow(u, dim - 1); }, 0.0, 1.0);
}

}  // namespace

double unit_sphere_area(int dim) {
  switch (dim) {
    case 1:
      return 2.0;
    case 2:
      return 2.0 * std::numbers::pi;
    case 3:
      return 4.0 * std::numbers::pi;
    default:
      throw ValidationError("unit_sphere_area: unsupported dimension");
  }
}

double bump_profile(double r) {
  if (r >= 1.0 || r <= -1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - r * r));
}

CrossSectionSpec CrossSectionSpec::power_law(int dim, double gamma) {
  if (dim < 2 || dim > 3) throw ValidationError("cross section: dimension must be 2 or 3");
  if (!(gamma >= -3.0 && gamma < 0.0))
    throw ValidationError("cross_section.gamma: must lie in [-3, 0) (got " + std::to_string(gamma) + ")");
  if (!(gamma + 2.0 > -dim))
    throw ValidationError("cross_section.gamma: |z|^(gamma+2) is not locally integrable in this dimension");
  CrossSectionSpec spec;
  spec.dim = dim;
  spec.gamma = gamma;
  // Gamma is in L^r near the origin for r (gamma+2) > -N; pick the midpoint of
  // the admissible window above N/(N-1).
  const double lower = static_cast<double>(dim) / (dim - 1);
  const double p = gamma + 2.0;
  const double upper = p < 0.0 ? -dim / p : std::numeric_limits<double>::infinity();
  if (upper > lower) {
    spec.integrability_exponent = std::isfinite(upper) ? 0.5 * (lower + upper) : 2.0 * lower;
  } else {
    // Empty window (Coulomb in 2D): keep the endpoint and flag it.
    spec.integrability_exponent = lower;
    spec.split_hypothesis_holds = false;
  }
  return spec;
}

double CrossSectionSpec::ellipticity_floor(double radius) const {
  if (!has_positive_floor()) return 0.0;
  return std::pow(2.0 * radius, exponent());
}

double gamma_cross_section(double s, const CrossSectionSpec& spec) {
  if (!(s > 0.0)) throw ValidationError("gamma_cross_section: singular point s = 0 (use the mollified form)");
  return std::pow(s, spec.exponent());
}

KernelConfig::KernelConfig(int dim, int n) : dim_(dim), n_(n) {
  if (dim < 1 || dim > kMaxDim) throw ValidationError("kernel config: bad dimension");
  if (n < 1) throw ValidationError("kernel.n: regularization index must be a positive integer");
  bump_norm_ = 1.0 / (unit_sphere_area(dim) * bump_moment(dim));
}

double KernelConfig::mollifier(double r) const {
  return std::pow(static_cast<double>(n_), dim_) * bump_norm_ * bump_profile(n_ * r);
}

double KernelConfig::cutoff(double r) const {
  const double s = r / n_;
  return std::exp(-0.5 * s * s);
}

Matrix projector(const Vector& z) {
  const double r2 = z.squaredNorm();
  if (!(r2 > 0.0)) throw ValidationError("projector: z must be nonzero");
  return Matrix::Identity(z.size(), z.size()) - z * z.transpose() / r2;
}

Matrix projector_regularized(const Vector& z, int n) {
  const double r2 = z.squaredNorm();
  const double denom = r2 + 1.0 / n;
  return (r2 * Matrix::Identity(z.size(), z.size()) - z * z.transpose()) / denom;
}

double mollified_cross_section(double radius, const CrossSectionSpec& spec, const KernelConfig& config) {
  const int dim = config.dim();
  const double p = spec.exponent();
  if (!(p > -dim)) throw ValidationError("mollified cross section: non-integrable singularity");
  if (p == 0.0) return 1.0;
  const double n = config.n();
  auto integrand = [&](double u) {
    const double b = bump_profile(u);
    if (b == 0.0) return 0.0;
    return b * std::pow(u, dim - 1) * sphere_average(dim, radius, u / n, p);
  };
  const double split = n * radius;
  double total = 0.0;
  if (split > 0.0 && split < 1.0) {
    total = integrate_tanh_sinh<0>(integrand, 0.0, split) + integrate_tanh_sinh<0>(integrand, split, 1.0);
  } else {
    total = integrate_tanh_sinh<0>(integrand, 0.0, 1.0);
  }
  return config.bump_normalization() * total;
}

double mollified_cross_section(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config) {
  return mollified_cross_section(z.norm(), spec, config);
}

Matrix kernel_matrix(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config) {
  const double r = z.norm();
  if (r == 0.0) return Matrix::Zero(z.size(), z.size());
  return mollified_cross_section(r, spec, config) * config.cutoff(r) * projector_regularized(z, config.n());
}

Vector kernel_divergence(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config) {
  const double r = z.norm();
  if (r == 0.0) return Vector::Zero(z.size());
  const double scale = mollified_cross_section(r, spec, config) * config.cutoff(r) / (r * r + 1.0 / config.n());
  return -(z.size() - 1.0) * scale * z;
}

Vector kernel_divergence_printed_coefficient(const Vector& z, const CrossSectionSpec& spec,
                                             const KernelConfig& config) {
  const double r = z.norm();
  if (r == 0.0) return Vector::Zero(z.size());
  const double scale = mollified_cross_section(r, spec, config) * config.cutoff(r) / (r * r + 1.0 / config.n());
  return -(z.size() - 3.0) * scale * z;
}

KernelSqrt kernel_sqrt(const Vector& z, const CrossSectionSpec& spec, const KernelConfig& config) {
  const auto dim = z.size();
  const double r = z.norm();
  if (r == 0.0) return {Matrix::Zero(dim, dim), Vector::Zero(dim)};
  const double r2 = r * r;
  const double sigma =
      std::sqrt(mollified_cross_section(r, spec, config) * config.cutoff(r)) / (r * std::sqrt(r2 + 1.0 / config.n()));
  KernelSqrt out;
  out.root = sigma * (r2 * Matrix::Identity(dim, dim) - z * z.transpose());
  out.divergence = -(dim - 1.0) * sigma * z;
  return out;
}

int sym_index(int dim, int i, int j) {
  if (i > j) std::swap(i, j);
  // Row-major upper triangle: row i starts after sum_{k<i} (dim - k) entries.
  return i * dim - i * (i - 1) / 2 + (j - i);
}

KernelTable::KernelTable(const VelocityGrid& grid, const CrossSectionSpec& spec, const KernelConfig& config)
    : grid_(grid), spec_(spec), config_(config) {
  if (spec.dim != grid.dim() || config.dim() != grid.dim())
    throw ValidationError("kernel table: grid, cross section and kernel config dimensions differ");
  const int dim = grid.dim();
  const int ext = extent();
  size_ = 1;
  for (int a = 0; a < dim; ++a) size_ *= static_cast<std::size_t>(ext);
  const int nsym = sym_size(dim);
  a_.assign(nsym * size_, 0.0);
  sqrt_.assign(nsym * size_, 0.0);
  div_.assign(dim * size_, 0.0);
  sqrt_div_.assign(dim * size_, 0.0);
  gamma_n_.assign(size_, 0.0);

  // Gamma^n depends only on |k|^2, so evaluate once per distinct integer radius.
  std::map<long, double> radial;
  for (std::size_t d = 0; d < size_; ++d) {
    const auto k = offset_of(d);
    long key = 0;
    for (int a = 0; a < dim; ++a) key += static_cast<long>(k[a]) * k[a];
    radial.emplace(key, 0.0);
  }
  std::vector<std::pair<long, double>> keys(radial.begin(), radial.end());
  const double h = grid.spacing();
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t i = 0; i < keys.size(); ++i) {
    keys[i].second = mollified_cross_section(h * std::sqrt(static_cast<double>(keys[i].first)), spec, config);
  }
  for (const auto& [key, value] : keys) radial[key] = value;

  const double inv_n = 1.0 / config.n();
  for (std::size_t d = 0; d < size_; ++d) {
    const auto k = offset_of(d);
    std::array<double, kMaxDim> z{0.0, 0.0, 0.0};
    long key = 0;
    for (int a = 0; a < dim; ++a) {
      z[a] = k[a] * h;
      key += static_cast<long>(k[a]) * k[a];
    }
    const double gamma_n = radial[key];
    gamma_n_[d] = gamma_n;
    if (key == 0) continue;
    const double r2 = h * h * static_cast<double>(key);
    const double r = std::sqrt(r2);
    const double weight = gamma_n * config.cutoff(r);
    const double phi = weight / (r2 + inv_n);
    const double sigma = std::sqrt(weight) / (r * std::sqrt(r2 + inv_n));
    for (int i = 0; i < dim; ++i) {
      for (int j = i; j < dim; ++j) {
        const double base = (i == j ? r2 : 0.0) - z[i] * z[j];
        const int c = sym_index(dim, i, j);
        a_[c * size_ + d] = phi * base;
        sqrt_[c * size_ + d] = sigma * base;
      }
      div_[i * size_ + d] = -(dim - 1.0) * phi * z[i];
      sqrt_div_[i * size_ + d] = -(dim - 1.0) * sigma * z[i];
    }
  }
}

std::size_t KernelTable::index_of(const std::array<int, kMaxDim>& offset) const {
  const int ext = extent();
  const int shift = grid_.points_per_axis() - 1;
  std::size_t flat = 0;
  for (int a = 0; a < dim(); ++a) flat = flat * ext + static_cast<std::size_t>(offset[a] + shift);
  return flat;
}

std::array<int, kMaxDim> KernelTable::offset_of(std::size_t d) const {
  const int ext = extent();
  const int shift = grid_.points_per_axis() - 1;
  std::array<int, kMaxDim> k{0, 0, 0};
  for (int a = dim() - 1; a >= 0; --a) {
    k[a] = static_cast<int>(d % ext) - shift;
    d /= ext;
  }
  return k;
}

std::size_t KernelTable::difference_index(std::size_t a, std::size_t b) const {
  const auto ia = grid_.multi_index(a);
  const auto ib = grid_.multi_index(b);
  std::array<int, kMaxDim> k{0, 0, 0};
  for (int ax = 0; ax < dim(); ++ax) k[ax] = ia[ax] - ib[ax];
  return index_of(k);
}

Vector KernelTable::displacement(std::size_t d) const {
  const auto k = offset_of(d);
  Vector z(dim());
  for (int a = 0; a < dim(); ++a) z[a] = k[a] * grid_.spacing();
  return z;
}

std::size_t KernelTable::negate(std::size_t d) const { return size_ - 1 - d; }

Matrix KernelTable::a_at(std::size_t d) const {
  Matrix m(dim(), dim());
  for (int i = 0; i < dim(); ++i)
    for (int j = 0; j < dim(); ++j) m(i, j) = a_[sym_index(dim(), i, j) * size_ + d];
  return m;
}

Vector KernelTable::div_at(std::size_t d) const {
  Vector v(dim());
  for (int i = 0; i < dim(); ++i) v[i] = div_[i * size_ + d];
  return v;
}

Matrix KernelTable::sqrt_at(std::size_t d) const {
  Matrix m(dim(), dim());
  for (int i = 0; i < dim(); ++i)
    for (int j = 0; j < dim(); ++j) m(i, j) = sqrt_[sym_index(dim(), i, j) * size_ + d];
  return m;
}

Vector KernelTable::sqrt_div_at(std::size_t d) const {
  Vector v(dim());
  for (int i = 0; i < dim(); ++i) v[i] = sqrt_div_[i * size_ + d];
  return v;
}

KernelTable build_kernel_table(const VelocityGrid& grid, const CrossSectionSpec& spec, const KernelConfig& config) {
  return KernelTable(grid, spec, config);
}

namespace {

Vector random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  Vector v(dim);
  do {
    for (int a = 0; a < dim; ++a) v[a] = normal(rng);
  } while (v.norm() < 1e-8);
  return v.normalized();
}

// Centered differences of a matrix field's row divergence at z with step h.
template <class MatrixFn>
Vector fd_divergence(const MatrixFn& field, const Vector& z, double h) {
  const auto dim = z.size();
  Vector out = Vector::Zero(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    Vector zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    out += (field(zp).col(j) - field(zm).col(j)) / (2.0 * h);
  }
  return out;
}

}  // namespace

KernelReport check_kernel_invariants(const KernelTable& table, const KernelCheckOptions& options) {
  KernelReport report;
  const int dim = table.dim();
  const auto& spec = table.spec();
  const auto& config = table.config();

  report.psd_min_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < table.size(); ++d) {
    const Matrix a = table.a_at(d);
    const Vector z = table.displacement(d);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
    report.psd_min_eigenvalue = std::min(report.psd_min_eigenvalue, eig.eigenvalues().minCoeff());
    report.max_az_residual = std::max(report.max_az_residual, (a * z).norm());
    report.symmetry_residual =
        std::max(report.symmetry_residual, (a - table.a_at(table.negate(d))).cwiseAbs().maxCoeff());
    const double an = a.norm();
    if (an > 0.0) {
      const Matrix s = table.sqrt_at(d);
      report.sqrt_residual = std::max(report.sqrt_residual, (s * s - a).norm() / an);
    }
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto a_fn = [&](const Vector& z) { return kernel_matrix(z, spec, config); };
  auto s_fn = [&](const Vector& z) { return kernel_sqrt(z, spec, config).root; };
  double err_a[2] = {0.0, 0.0};
  double err_s[2] = {0.0, 0.0};
  double err_printed = 0.0;
  for (int p = 0; p < options.fd_points; ++p) {
    const Vector z = random_unit(rng, dim) * (0.3 + 2.7 * unit(rng));
    const Vector div = kernel_divergence(z, spec, config);
    const Vector sdiv = kernel_sqrt(z, spec, config).divergence;
    for (int level = 0; level < 2; ++level) {
      const double h = options.fd_step / (1 << level);
      const Vector fa = fd_divergence(a_fn, z, h);
      const Vector fs = fd_divergence(s_fn, z, h);
      err_a[level] = std::max(err_a[level], (fa - div).norm() / div.norm());
      err_s[level] = std::max(err_s[level], (fs - sdiv).norm() / sdiv.norm());
      if (level == 1) {
        const Vector printed = kernel_divergence_printed_coefficient(z, spec, config);
        err_printed = std::max(err_printed, (fa - printed).norm() / div.norm());
      }
    }
  }
  report.divergence_fd_error = err_a[0];
  report.divergence_fd_order = std::log2(err_a[0] / err_a[1]);
  report.sqrt_divergence_fd_error = err_s[0];
  report.sqrt_divergence_fd_order = std::log2(err_s[0] / err_s[1]);
  report.printed_coefficient_fd_error = err_printed;

  const double radius = options.ellipticity_radius;
  const double floor_const = spec.ellipticity_floor(2.0 * radius) * config.cutoff(radius);
  const double uniform_s = radius * radius / (radius * radius + 1.0 / config.n());
  report.ellipticity_floor_margin = std::numeric_limits<double>::infinity();
  report.uniform_constant_margin = std::numeric_limits<double>::infinity();
  for (int s = 0; s < options.ellipticity_samples; ++s) {
    const Vector z = random_unit(rng, dim) * radius * std::pow(unit(rng), 1.0 / dim);
    const Vector eta = random_unit(rng, dim);
    const double r = z.norm();
    if (r == 0.0) continue;
    const double quad = eta.dot(kernel_matrix(z, spec, config) * eta);
    const double cos = z.dot(eta) / r;
    const double angular = 1.0 - cos * cos;
    const double local_s = r * r / (r * r + 1.0 / config.n());
    const double floor = floor_const * local_s * angular;
    const double uniform_floor = floor_const * uniform_s * angular;
    if (floor > 0.0) report.ellipticity_floor_margin = std::min(report.ellipticity_floor_margin, quad / floor - 1.0);
    if (uniform_floor > 0.0)
      report.uniform_constant_margin = std::min(report.uniform_constant_margin, quad / uniform_floor - 1.0);
  }
  report.samples = options.ellipticity_samples;
  return report;
}

}  // namespace lfd
