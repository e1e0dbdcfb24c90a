#include "lfd/mean_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lfd {

namespace {

std::span<const double> component(const std::vector<double>& data, std::size_t c, std::size_t n) {
  return {data.data() + c * n, n};
}

void check_size(std::span<const double> in, std::size_t n, const char* what) {
  if (in.size() != n) throw ValidationError(std::string(what) + ": field size mismatch");
}

}  // namespace

Matrix CoefficientFields::a_bar_at(std::size_t ix, std::size_t iv) const {
  const int ns = sym_size(dim);
  Matrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = a_bar[(ix * ns + sym_index(dim, i, j)) * velocity_size + iv];
  return m;
}

Vector CoefficientFields::b_bar_at(std::size_t ix, std::size_t iv) const {
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = b_bar[(ix * dim + i) * velocity_size + iv];
  return v;
}

Vector CoefficientFields::div_a_bar_at(std::size_t ix, std::size_t iv) const {
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = div_a_bar[(ix * dim + i) * velocity_size + iv];
  return v;
}

MeanField::MeanField(const KernelTable& table, int stencil_order)
    : table_(table), convolver_(table.grid()), order_(stencil_order) {
  const int dim = table_.dim();
  const std::size_t n = table_.size();
  for (int a = 0; a < dim; ++a) gradient_.push_back(gradient_matrix(table_.grid(), a, order_));
  for (int c = 0; c < sym_size(dim); ++c) {
    a_spec_.push_back(convolver_.kernel_spectrum(component(table_.a_samples(), c, n)));
    sqrt_spec_.push_back(convolver_.kernel_spectrum(component(table_.sqrt_samples(), c, n)));
  }
  for (int i = 0; i < dim; ++i) div_spec_.push_back(convolver_.kernel_spectrum(component(table_.div_samples(), i, n)));
}

void MeanField::a_bar(std::span<const double> weight, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  check_size(weight, nv, "a_bar");
  const double hn = table_.grid().cell_volume();
  const Spectrum w = convolver_.field_spectrum(weight);
  for (int c = 0; c < sym_size(dim()); ++c) {
    std::span<double> o = out.subspan(c * nv, nv);
    convolver_.apply(a_spec_[c], w, o);
    for (double& x : o) x *= hn;
  }
}

void MeanField::sqrt_convolution(std::span<const double> weight, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  check_size(weight, nv, "sqrt_convolution");
  const double hn = table_.grid().cell_volume();
  const Spectrum w = convolver_.field_spectrum(weight);
  for (int c = 0; c < sym_size(dim()); ++c) {
    std::span<double> o = out.subspan(c * nv, nv);
    convolver_.apply(sqrt_spec_[c], w, o);
    for (double& x : o) x *= hn;
  }
}

void MeanField::div_convolution(std::span<const double> field, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  check_size(field, nv, "div_convolution");
  const double hn = table_.grid().cell_volume();
  const Spectrum w = convolver_.field_spectrum(field);
  for (int i = 0; i < dim(); ++i) {
    std::span<double> o = out.subspan(i * nv, nv);
    convolver_.apply(div_spec_[i], w, o);
    for (double& x : o) x *= hn;
  }
}

void MeanField::div_dot_gradient(std::span<const double> field, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  check_size(field, nv, "div_dot_gradient");
  const double hn = table_.grid().cell_volume();
  Eigen::Map<const Eigen::VectorXd> f(field.data(), static_cast<Eigen::Index>(nv));
  std::fill(out.begin(), out.begin() + nv, 0.0);
  std::vector<double> grad(nv), tmp(nv);
  for (int i = 0; i < dim(); ++i) {
    Eigen::Map<Eigen::VectorXd>(grad.data(), static_cast<Eigen::Index>(nv)) = gradient_[i] * f;
    convolver_.apply(div_spec_[i], convolver_.field_spectrum(grad), tmp);
    for (std::size_t v = 0; v < nv; ++v) out[v] += hn * tmp[v];
  }
}

void MeanField::a_times_vector_field(std::span<const double> field, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  const int dim = this->dim();
  check_size(field, nv * dim, "a_times_vector_field");
  const double hn = table_.grid().cell_volume();
  std::vector<Spectrum> spec;
  for (int j = 0; j < dim; ++j) spec.push_back(convolver_.field_spectrum(field.subspan(j * nv, nv)));
  const std::size_t cs = spec[0].size();
  Spectrum acc(cs);
  std::vector<double> tmp(nv);
  for (int i = 0; i < dim; ++i) {
    // Sum in frequency space: one inverse transform per output component.
    std::fill(acc.begin(), acc.end(), std::complex<double>(0.0, 0.0));
    for (int j = 0; j < dim; ++j) {
      const Spectrum& k = a_spec_[sym_index(dim, i, j)];
      for (std::size_t q = 0; q < cs; ++q) acc[q] += k[q] * spec[j][q];
    }
    Spectrum one(cs, std::complex<double>(1.0, 0.0));
    convolver_.apply(one, acc, tmp);
    for (std::size_t v = 0; v < nv; ++v) out[i * nv + v] = hn * tmp[v];
  }
}

void MeanField::a_times_gradient(std::span<const double> field, std::span<double> out) const {
  const std::size_t nv = table_.grid().size();
  check_size(field, nv, "a_times_gradient");
  Eigen::Map<const Eigen::VectorXd> f(field.data(), static_cast<Eigen::Index>(nv));
  std::vector<double> grad(nv * dim());
  for (int j = 0; j < dim(); ++j)
    Eigen::Map<Eigen::VectorXd>(grad.data() + j * nv, static_cast<Eigen::Index>(nv)) = gradient_[j] * f;
  a_times_vector_field(grad, out);
}

CoefficientFields coefficient_fields(const DensityField& f, const MeanField& engine) {
  const VelocityGrid& vg = f.grid.velocity();
  if (!(vg == engine.table().grid())) throw ValidationError("coefficient_fields: grid/table mismatch");
  require_pauli_bound(f.samples, "coefficient_fields");
  const int dim = vg.dim();
  const int ns = sym_size(dim);
  const std::size_t nv = vg.size();
  const std::size_t nx = f.grid.spatial_size();
  CoefficientFields out;
  out.dim = dim;
  out.spatial_size = nx;
  out.velocity_size = nv;
  out.a_bar.assign(nx * ns * nv, 0.0);
  out.b_bar.assign(nx * dim * nv, 0.0);
  out.div_a_bar.assign(nx * dim * nv, 0.0);
  out.div_b_bar.assign(nx * nv, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto fs = f.slice(ix);
    std::vector<double> g(nv);
    for (std::size_t v = 0; v < nv; ++v) g[v] = fs[v] * (1.0 - fs[v]);
    engine.a_bar(g, std::span<double>(out.a_bar).subspan(ix * ns * nv, ns * nv));
    engine.div_convolution(fs, std::span<double>(out.b_bar).subspan(ix * dim * nv, dim * nv));
    engine.div_convolution(g, std::span<double>(out.div_a_bar).subspan(ix * dim * nv, dim * nv));
    engine.div_dot_gradient(fs, std::span<double>(out.div_b_bar).subspan(ix * nv, nv));
  }
  return out;
}

CoefficientFields coefficient_fields_direct(const DensityField& f, const KernelTable& table, int stencil_order) {
  const VelocityGrid& vg = f.grid.velocity();
  if (!(vg == table.grid())) throw ValidationError("coefficient_fields_direct: grid/table mismatch");
  require_pauli_bound(f.samples, "coefficient_fields_direct");
  const int dim = vg.dim();
  const int ns = sym_size(dim);
  const std::size_t nv = vg.size();
  const std::size_t nx = f.grid.spatial_size();
  const std::size_t nd = table.size();
  const double hn = vg.cell_volume();
  const auto& A = table.a_samples();
  const auto& B = table.div_samples();
  CoefficientFields out;
  out.dim = dim;
  out.spatial_size = nx;
  out.velocity_size = nv;
  out.a_bar.assign(nx * ns * nv, 0.0);
  out.b_bar.assign(nx * dim * nv, 0.0);
  out.div_a_bar.assign(nx * dim * nv, 0.0);
  out.div_b_bar.assign(nx * nv, 0.0);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto fs = f.slice(ix);
    const std::vector<double> grad = velocity_gradient(vg, fs, stencil_order);
    for (std::size_t v = 0; v < nv; ++v) {
      for (std::size_t w = 0; w < nv; ++w) {
        const std::size_t d = table.difference_index(v, w);
        const double g = fs[w] * (1.0 - fs[w]);
        for (int c = 0; c < ns; ++c) out.a_bar[(ix * ns + c) * nv + v] += hn * A[c * nd + d] * g;
        for (int i = 0; i < dim; ++i) {
          out.b_bar[(ix * dim + i) * nv + v] += hn * B[i * nd + d] * fs[w];
          out.div_a_bar[(ix * dim + i) * nv + v] += hn * B[i * nd + d] * g;
          out.div_b_bar[ix * nv + v] += hn * B[i * nd + d] * grad[i * nv + w];
        }
      }
    }
  }
  return out;
}

double truncated_density(const VelocityGrid& grid, std::span<const double> g, const Point& v, const Vector& eta,
                         double mu, std::size_t skip_node) {
  if (!(mu >= 0.0 && mu < 1.0)) throw ValidationError("truncated_density: mu must lie in [0, 1)");
  if (g.size() != grid.size()) throw ValidationError("truncated_density: field size mismatch");
  const int dim = grid.dim();
  const double cap = 1.0 / (1.0 - mu);
  double sum = 0.0;
  for (std::size_t w = 0; w < grid.size(); ++w) {
    if (w == skip_node) continue;
    const Point vs = grid.node(w);
    double r2 = 0.0, dot = 0.0, s2 = 0.0;
    for (int a = 0; a < dim; ++a) {
      const double d = v[a] - vs[a];
      r2 += d * d;
      dot += d * eta[a];
      s2 += vs[a] * vs[a];
    }
    if (r2 == 0.0) continue;
    if (s2 > cap * cap) continue;
    if (dot > mu * std::sqrt(r2)) continue;
    sum += g[w];
  }
  return sum * grid.cell_volume();
}

namespace {

// |cos| <= mu version of the truncated density, restricted to |v*| <= radius.
double symmetric_cone_density(const VelocityGrid& grid, std::span<const double> g, std::size_t node,
                              const Vector& eta, double mu, double radius) {
  const int dim = grid.dim();
  const Point v = grid.node(node);
  double sum = 0.0;
  for (std::size_t w = 0; w < grid.size(); ++w) {
    if (w == node) continue;
    const Point vs = grid.node(w);
    double r2 = 0.0, dot = 0.0, s2 = 0.0;
    for (int a = 0; a < dim; ++a) {
      const double d = v[a] - vs[a];
      r2 += d * d;
      dot += d * eta[a];
      s2 += vs[a] * vs[a];
    }
    if (s2 > radius * radius) continue;
    if (std::abs(dot) > mu * std::sqrt(r2)) continue;
    sum += g[w];
  }
  return sum * grid.cell_volume();
}

// Low-discrepancy direction on the unit sphere.
Vector sample_direction(int dim, int s) {
  const double phi = std::numbers::phi;
  Vector eta(dim);
  if (dim == 2) {
    const double t = 2.0 * std::numbers::pi * std::fmod((s + 0.5) * (phi - 1.0), 1.0);
    eta << std::cos(t), std::sin(t);
  } else {
    // Fibonacci sphere, period 64.
    const int k = s % 64;
    const double z = 1.0 - (2.0 * k + 1.0) / 64.0;
    const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double t = 2.0 * std::numbers::pi * std::fmod(k * (phi - 1.0) + 0.37 * (s / 64), 1.0);
    eta << rr * std::cos(t), rr * std::sin(t), z;
  }
  return eta;
}

}  // namespace

EllipticityProbe ellipticity_probe(const DensityField& f, const MeanField& engine, const ProbeConfig& config) {
  if (!(config.mu >= 0.0 && config.mu < 1.0)) throw ValidationError("ellipticity_probe: mu must lie in [0, 1)");
  if (!(config.alpha > 0.0)) throw ValidationError("ellipticity_probe: alpha must be positive");
  if (!(config.radius > 0.0) || config.samples <= 0)
    throw ValidationError("ellipticity_probe: radius and sample count must be positive");
  require_pauli_bound(f.samples, "ellipticity_probe");
  const VelocityGrid& vg = f.grid.velocity();
  const int dim = vg.dim();
  const std::size_t nv = vg.size();
  const std::size_t nx = f.grid.spatial_size();
  const KernelTable& table = engine.table();

  EllipticityProbe p;
  p.alpha = config.alpha;
  p.mu = config.mu;
  p.radius = config.radius;
  p.radius_prime = 1.0 / (1.0 - config.mu);

  std::vector<std::size_t> ball;
  for (std::size_t v = 0; v < nv; ++v)
    if (vg.norm2(v) <= config.radius * config.radius) ball.push_back(v);
  if (ball.empty()) throw ValidationError("ellipticity_probe: no velocity node within the probe radius");
  const double phi = std::numbers::phi;
  for (int s = 0; s < config.samples; ++s) {
    const auto k = static_cast<std::size_t>(std::fmod((s + 0.5) / phi, 1.0) * ball.size());
    p.sample_nodes.push_back(ball[std::min(k, ball.size() - 1)]);
    p.sample_directions.push_back(sample_direction(dim, s));
  }

  // Lower bound on eta.a(z)eta / (1 - cos^2) over lattice displacements h <= |z| <= R + R'.
  const double rt = p.radius + p.radius_prime;
  const double inv_n = 1.0 / table.config().n();
  const double h = vg.spacing();
  double gamma_floor = 0.0;
  if (table.spec().has_positive_floor())
    gamma_floor = inv_n <= rt ? table.spec().ellipticity_floor(rt) : gamma_cross_section(rt + inv_n, table.spec());
  const double mu = config.mu;
  p.nu_floor = gamma_floor * table.config().cutoff(rt) * (h * h / (h * h + inv_n)) * (1.0 - mu * mu);

  const std::size_t ns = static_cast<std::size_t>(config.samples);
  p.rho.assign(nx, 0.0);
  p.rho_mu.assign(nx * ns, 0.0);
  p.k_alpha_mask.assign(nx, 0);
  p.nu_estimate = std::numeric_limits<double>::infinity();
  p.floor_min_slack = std::numeric_limits<double>::infinity();
  const int nsym = sym_size(dim);
  std::vector<double> g(nv), abar(nsym * nv);
  std::size_t in_k = 0;
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto fs = f.slice(ix);
    double rho = 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
      g[v] = fs[v] * (1.0 - fs[v]);
      rho += g[v];
    }
    p.rho[ix] = rho * vg.cell_volume();
    const bool in = p.rho[ix] > config.alpha;
    p.k_alpha_mask[ix] = in ? 1 : 0;
    in_k += in ? 1 : 0;
    engine.a_bar(g, abar);
    for (std::size_t s = 0; s < ns; ++s) {
      const std::size_t node = p.sample_nodes[s];
      const Vector& eta = p.sample_directions[s];
      double q = 0.0;
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) q += eta[i] * eta[j] * abar[sym_index(dim, i, j) * nv + node];
      const double rmu = truncated_density(vg, g, vg.node(node), eta, mu);
      p.rho_mu[ix * ns + s] = rmu;
      if (in && rmu > 0.0) p.nu_estimate = std::min(p.nu_estimate, q / rmu);
      const double sym = symmetric_cone_density(vg, g, node, eta, mu, p.radius_prime);
      p.floor_min_slack = std::min(p.floor_min_slack, q - p.nu_floor * sym);
    }
  }
  p.k_alpha_empty = in_k == 0;
  p.k_alpha_fraction = static_cast<double>(in_k) / static_cast<double>(nx);
  if (p.k_alpha_empty || !std::isfinite(p.nu_estimate)) p.nu_estimate = std::numeric_limits<double>::quiet_NaN();
  return p;
}

}  // namespace lfd
