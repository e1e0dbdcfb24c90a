#include "lfd/initial_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lfd/collision_kernel.hpp"

namespace lfd {

double EnvelopeSpec::lower(double q) const { return c_lower * std::exp(-alpha * q); }

double EnvelopeSpec::upper(double q) const {
  const double e = c_upper * std::exp(-alpha * q);
  return e / (1.0 + e);
}

double phase_radius2(const PhaseGrid& grid, std::size_t k) {
  const std::size_t nv = grid.velocity_size();
  double q = grid.velocity().norm2(k % nv);
  if (!grid.homogeneous()) {
    const Point x = grid.x_node(k / nv);
    for (int a = 0; a < grid.dim(); ++a) q += x[a] * x[a];
  }
  return q;
}

EnvelopeReport envelope_check(const DensityField& f, const EnvelopeSpec& env) {
  EnvelopeReport r;
  r.worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < f.samples.size(); ++k) {
    const double q = phase_radius2(f.grid, k);
    const double lo = env.lower(q), hi = env.upper(q), v = f.samples[k];
    if (v < lo) ++r.lower_violations;
    if (v > hi) ++r.upper_violations;
    r.worst_margin = std::min({r.worst_margin, v - lo, hi - v});
  }
  return r;
}

namespace {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double response_var = 0.0;
  double regressor_var = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit fit;
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return fit;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  fit.regressor_var = sxx / n;
  fit.response_var = syy / n;
  if (sxx > 0.0) fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

}  // namespace

EnvelopeFit fit_envelope(const DensityField& f, double margin) {
  if (!(margin >= 1.0)) throw ValidationError("fit_envelope: margin must be >= 1");
  std::vector<double> q, logf, logit;
  std::vector<std::size_t> used;
  EnvelopeFit out;
  for (std::size_t k = 0; k < f.samples.size(); ++k) {
    const double v = f.samples[k];
    if (!(v > 0.0 && v < 1.0)) {
      ++out.excluded_nodes;
      continue;
    }
    used.push_back(k);
    q.push_back(phase_radius2(f.grid, k));
    logf.push_back(std::log(v));
    logit.push_back(std::log(v / (1.0 - v)));
  }
  const LineFit lo = least_squares(q, logf);
  const LineFit hi = least_squares(q, logit);
  out.spec.alpha = -lo.slope;
  out.raw_c_lower = std::exp(lo.intercept);
  out.raw_c_upper = std::exp(hi.intercept);
  out.raw_alpha_upper = -hi.slope;
  const double scale = std::max(1.0, std::abs(lo.intercept));
  out.degenerate = used.size() < 2 || lo.regressor_var == 0.0 || lo.response_var <= 1e-24 * scale * scale ||
                   !(out.spec.alpha > 0.0);
  if (used.empty()) {
    out.spec = EnvelopeSpec{1.0, 0.0, 0.0};
    return out;
  }
  // Tightest witnesses for the fitted rate.
  double c1 = std::numeric_limits<double>::infinity(), c2 = 0.0;
  for (std::size_t k = 0; k < f.samples.size(); ++k) {
    const double v = f.samples[k];
    const double e = std::exp(out.spec.alpha * phase_radius2(f.grid, k));
    c1 = std::min(c1, v * e);
    if (v < 1.0) c2 = std::max(c2, v / (1.0 - v) * e);
    else c2 = std::numeric_limits<double>::infinity();
  }
  out.spec.c_lower = c1 / margin;
  out.spec.c_upper = c2 * margin;
  return out;
}

double plateau_cutoff(double radius, int n) {
  const double inner = 0.5 * n, outer = static_cast<double>(n);
  if (radius <= inner) return 1.0;
  if (radius >= outer) return 0.0;
  const double t = (outer - radius) / (outer - inner);
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

DensityField regularize_initial_datum(const DensityField& f0, int n) {
  if (n < 1) throw ValidationError("regularize_initial_datum: n must be >= 1");
  require_pauli_bound(f0.samples, "regularize_initial_datum");
  const PhaseGrid& grid = f0.grid;
  const VelocityGrid& vg = grid.velocity();
  const int dim = grid.dim();
  const bool hom = grid.homogeneous();
  const double width = 1.0 / n;
  const int ndir = hom ? dim : 2 * dim;

  // Stencil of the phase-space mollifier: offsets in lattice units per direction.
  std::vector<double> spacing(ndir);
  for (int a = 0; a < dim; ++a) {
    spacing[a] = vg.spacing();
    if (!hom) spacing[dim + a] = grid.spatial()->spacing();
  }
  std::vector<int> reach(ndir);
  for (int a = 0; a < ndir; ++a) reach[a] = static_cast<int>(std::floor(width / spacing[a]));
  struct Tap {
    std::array<int, 2 * kMaxDim> off;
    double w;
  };
  std::vector<Tap> taps;
  std::array<int, 2 * kMaxDim> off{};
  for (int a = 0; a < ndir; ++a) off[a] = -reach[a];
  double wsum = 0.0;
  while (true) {
    double r2 = 0.0;
    for (int a = 0; a < ndir; ++a) r2 += std::pow(off[a] * spacing[a], 2);
    const double w = bump_profile(std::sqrt(r2) / width);
    if (w > 0.0) {
      taps.push_back({off, w});
      wsum += w;
    }
    int a = ndir - 1;
    while (a >= 0 && off[a] == reach[a]) {
      off[a] = -reach[a];
      --a;
    }
    if (a < 0) break;
    ++off[a];
  }
  for (auto& t : taps) t.w /= wsum;

  const std::size_t nv = vg.size();
  const std::size_t nx = grid.spatial_size();
  const int m = vg.points_per_axis();
  DensityField out(grid, f0.time);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto xi = hom ? std::array<int, kMaxDim>{0, 0, 0} : grid.spatial()->multi_index(ix);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const auto vi = vg.multi_index(iv);
      double conv = 0.0;
      for (const Tap& t : taps) {
        std::array<int, kMaxDim> vj{0, 0, 0}, xj{0, 0, 0};
        bool inside = true;
        for (int a = 0; a < dim; ++a) {
          vj[a] = vi[a] + t.off[a];
          if (vj[a] < 0 || vj[a] >= m) inside = false;
        }
        if (!hom) {
          const SpatialGrid& sg = *grid.spatial();
          const int p = sg.points_per_axis();
          for (int a = 0; a < dim; ++a) {
            xj[a] = xi[a] + t.off[dim + a];
            if (sg.topology() == Topology::periodic) xj[a] = ((xj[a] % p) + p) % p;
            else if (xj[a] < 0 || xj[a] >= p) inside = false;
          }
        }
        if (!inside) continue;
        const std::size_t jx = hom ? 0 : grid.spatial()->flat_index(xj);
        conv += t.w * f0.samples[jx * nv + vg.flat_index(vj)];
      }
      const std::size_t k = ix * nv + iv;
      const double q = phase_radius2(grid, k);
      out.samples[k] = (std::exp(-q) / n + conv * plateau_cutoff(std::sqrt(q), n)) / (1.0 + 2.0 / n);
    }
  }
  return out;
}

void validate(const AnalyticDatum& d, int dim) {
  const std::string& f = d.family;
  if (f != "gaussian" && f != "double-gaussian" && f != "fermi-dirac-equilibrium" && f != "plateau")
    throw ValidationError("initial.family: unknown family '" + f + "'");
  if (!d.drift.empty() && static_cast<int>(d.drift.size()) != dim)
    throw ValidationError("initial.drift: expected " + std::to_string(dim) + " components");
  if ((f == "gaussian" || f == "double-gaussian" || f == "plateau") && !(d.amplitude >= 0.0 && d.amplitude <= 1.0))
    throw ValidationError("initial.amplitude: must lie in [0, 1]");
  if (f == "double-gaussian" && d.amplitude > 0.5)
    throw ValidationError("initial.amplitude: double-gaussian needs amplitude <= 0.5 to respect the Pauli bound");
  if (!(d.temperature > 0.0)) throw ValidationError("initial.temperature: must be positive");
  if (f == "fermi-dirac-equilibrium" && !(d.fd_b > 0.0)) throw ValidationError("initial.fd_b: must be positive");
  if (!(d.radius > 0.0)) throw ValidationError("initial.radius: must be positive");
  if (!(d.x_width > 0.0)) throw ValidationError("initial.x_width: must be positive");
}

DensityField make_initial_datum(const PhaseGrid& grid, const AnalyticDatum& d) {
  const int dim = grid.dim();
  validate(d, dim);
  std::array<double, kMaxDim> u{0.0, 0.0, 0.0};
  for (std::size_t a = 0; a < d.drift.size(); ++a) u[a] = d.drift[a];
  const VelocityGrid& vg = grid.velocity();
  const std::size_t nv = vg.size();
  DensityField f(grid, 0.0);
  for (std::size_t ix = 0; ix < grid.spatial_size(); ++ix) {
    double xprof = 1.0;
    if (!grid.homogeneous()) {
      const Point x = grid.x_node(ix);
      double x2 = 0.0;
      for (int a = 0; a < dim; ++a) x2 += x[a] * x[a];
      xprof = std::exp(-x2 / (d.x_width * d.x_width));
    }
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const Point v = vg.node(iv);
      double dp = 0.0, dm = 0.0;
      for (int a = 0; a < dim; ++a) {
        dp += (v[a] - u[a]) * (v[a] - u[a]);
        dm += (v[a] + u[a]) * (v[a] + u[a]);
      }
      double val = 0.0;
      if (d.family == "gaussian") {
        val = d.amplitude * std::exp(-dp / d.temperature);
      } else if (d.family == "double-gaussian") {
        val = d.amplitude * (std::exp(-dp / d.temperature) + std::exp(-dm / d.temperature));
      } else if (d.family == "fermi-dirac-equilibrium") {
        val = 1.0 / (1.0 + std::exp(d.fd_a + d.fd_b * dp));
      } else {
        // Smoothed indicator of the ball of the given radius.
        val = d.amplitude * 0.5 * std::erfc((std::sqrt(dp) - d.radius) / (0.25 * vg.spacing() + 0.1));
      }
      f.samples[ix * nv + iv] = std::clamp(val * xprof, 0.0, 1.0);
    }
  }
  return f;
}

}  // namespace lfd
