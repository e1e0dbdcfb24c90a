#include "lfd/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "lfd/collision_kernel.hpp"
#include "lfd/stencil.hpp"

namespace lfd {

ConservedMoments conserved_moments(const DensityField& f, double t) {
  const PhaseGrid& g = f.grid;
  const int dim = g.dim();
  const std::size_t nv = g.velocity_size();
  const double w = g.quadrature_weight();
  ConservedMoments m;
  m.momentum.assign(dim, 0.0);
  for (std::size_t ix = 0; ix < g.spatial_size(); ++ix) {
    const Point x = g.x_node(ix);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const double val = f.samples[ix * nv + iv] * w;
      if (val == 0.0) continue;
      const Point v = g.velocity().node(iv);
      double v2 = 0.0, r2 = 0.0;
      for (int a = 0; a < dim; ++a) {
        m.momentum[a] += val * v[a];
        v2 += v[a] * v[a];
        r2 += (x[a] - t * v[a]) * (x[a] - t * v[a]);
      }
      m.mass += val;
      m.energy += val * v2;
      m.inertia += val * r2;
    }
  }
  return m;
}

DriftReport drift_check(const std::vector<DiagnosticsRecord>& records, double epsilon, int dim, double constant) {
  DriftReport r;
  r.constant = constant > 0.0 ? constant : 2.0 * dim;
  if (records.empty()) return r;
  const DiagnosticsRecord& first = records.front();
  const double m0 = first.mass;
  const double t0 = first.time;
  for (const auto& rec : records) {
    const double t = rec.time - t0;
    if (t <= 0.0) continue;
    const double pe = r.constant * epsilon * t * m0;
    const double pi = r.constant * epsilon * t * t * t / 3.0 * m0;
    const double de = rec.kinetic_energy - first.kinetic_energy;
    const double di = rec.inertia - first.inertia;
    const double ee = pe != 0.0 ? std::abs(de - pe) / std::abs(pe) : std::abs(de);
    const double ei = pi != 0.0 ? std::abs(di - pi) / std::abs(pi) : std::abs(di);
    r.energy_max_rel_dev = std::max(r.energy_max_rel_dev, ee);
    r.inertia_max_rel_dev = std::max(r.inertia_max_rel_dev, ei);
    r.energy_final_rel_dev = ee;
    r.inertia_final_rel_dev = ei;
    r.energy_increment = de;
    r.energy_predicted = pe;
    r.inertia_increment = di;
    r.inertia_predicted = pi;
  }
  return r;
}

double entropy_density(double f) {
  double s = 0.0;
  if (f > 0.0 && f < 1.0) s = f * std::log(f) + (1.0 - f) * std::log1p(-f);
  return s;
}

double quantum_entropy(const DensityField& f) {
  double s = 0.0;
  for (double v : f.samples) s += entropy_density(v);
  return s * f.grid.quadrature_weight();
}

double entropy_dissipation(const DensityField& f, const MeanField& engine, ArcsinGradient mode) {
  const VelocityGrid& vg = f.grid.velocity();
  if (!(vg == engine.table().grid())) throw ValidationError("entropy_dissipation: grid/table mismatch");
  const int dim = vg.dim();
  const int nsym = sym_size(dim);
  const std::size_t nv = vg.size();
  const std::size_t nx = f.grid.spatial_size();
  const auto& grad = engine.gradients();
  std::vector<double> per_x(nx, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto fs = f.slice(ix);
    std::vector<double> F(nv), s(nv), arc(nv);
    for (std::size_t v = 0; v < nv; ++v) {
      const double c = std::clamp(fs[v], 0.0, 1.0);
      F[v] = c * (1.0 - c);
      s[v] = std::sqrt(F[v]);
      arc[v] = std::asin(std::sqrt(c));
    }
    std::vector<double> G(dim * nv), sG(dim * nv);
    Eigen::Map<const Eigen::VectorXd> arcv(arc.data(), static_cast<Eigen::Index>(nv));
    Eigen::Map<const Eigen::VectorXd> fv(fs.data(), static_cast<Eigen::Index>(nv));
    for (int i = 0; i < dim; ++i) {
      Eigen::Map<Eigen::VectorXd> gi(G.data() + i * nv, static_cast<Eigen::Index>(nv));
      if (mode == ArcsinGradient::difference) {
        gi = grad[i] * arcv;
      } else {
        gi = grad[i] * fv;
        for (std::size_t v = 0; v < nv; ++v) gi[v] = s[v] > 0.0 ? gi[v] / (2.0 * s[v]) : 0.0;
      }
      for (std::size_t v = 0; v < nv; ++v) sG[i * nv + v] = s[v] * G[i * nv + v];
    }
    std::vector<double> abar(nsym * nv), aw(dim * nv);
    engine.a_bar(F, abar);
    engine.a_times_vector_field(sG, aw);
    double t1 = 0.0, t2 = 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j)
          t1 += G[i * nv + v] * abar[sym_index(dim, i, j) * nv + v] * G[j * nv + v];
        t2 += sG[i * nv + v] * aw[i * nv + v];
      }
    }
    per_x[ix] = t1 - t2;
  }
  double total = 0.0;
  for (double v : per_x) total += v;
  // Convolutions already carry one factor h^N; the quadrature weight supplies the other.
  return 8.0 * f.grid.quadrature_weight() * total;
}

double entropy_dissipation_direct(const DensityField& f, const KernelTable& table, int stencil_order) {
  const VelocityGrid& vg = f.grid.velocity();
  if (!(vg == table.grid())) throw ValidationError("entropy_dissipation_direct: grid/table mismatch");
  const int dim = vg.dim();
  const std::size_t nv = vg.size();
  const std::size_t nd = table.size();
  const auto& A = table.a_samples();
  double total = 0.0;
  for (std::size_t ix = 0; ix < f.grid.spatial_size(); ++ix) {
    const auto fs = f.slice(ix);
    for (double v : fs)
      if (!(v > 0.0 && v < 1.0)) throw ValidationError("entropy_dissipation_direct: needs 0 < f < 1");
    const std::vector<double> grad = velocity_gradient(vg, fs, stencil_order);
    std::vector<double> F(nv);
    for (std::size_t v = 0; v < nv; ++v) F[v] = fs[v] * (1.0 - fs[v]);
    double sum = 0.0;
    std::array<double, kMaxDim> w{};
    for (std::size_t v = 0; v < nv; ++v) {
      for (std::size_t u = 0; u < nv; ++u) {
        const std::size_t d = table.difference_index(v, u);
        for (int i = 0; i < dim; ++i) w[i] = F[u] * grad[i * nv + v] - F[v] * grad[i * nv + u];
        double q = 0.0;
        for (int i = 0; i < dim; ++i)
          for (int j = 0; j < dim; ++j) q += w[i] * A[sym_index(dim, i, j) * nd + d] * w[j];
        sum += q / (F[u] * F[v]);
      }
    }
    total += sum;
  }
  return total * f.grid.quadrature_weight() * vg.cell_volume();
}

EntropyReport entropy_inequality_check(const std::vector<DiagnosticsRecord>& records, double weight) {
  EntropyReport r;
  r.weight = weight;
  if (records.empty()) return r;
  r.initial_entropy = records.front().entropy;
  r.max_slack = -std::numeric_limits<double>::infinity();
  for (const auto& rec : records)
    r.max_slack = std::max(r.max_slack, rec.entropy + weight * rec.cumulative_dissipation - r.initial_entropy);
  return r;
}

double weighted_gradient_norm(const DensityField& f, const EnvelopeSpec& env, int stencil_order) {
  const VelocityGrid& vg = f.grid.velocity();
  const int dim = vg.dim();
  const std::size_t nv = vg.size();
  double total = 0.0;
  for (std::size_t ix = 0; ix < f.grid.spatial_size(); ++ix) {
    const std::vector<double> g = velocity_gradient(vg, f.slice(ix), stencil_order);
    for (std::size_t v = 0; v < nv; ++v) {
      double g2 = 0.0;
      for (int a = 0; a < dim; ++a) g2 += g[a * nv + v] * g[a * nv + v];
      if (g2 == 0.0) continue;
      total += std::exp(env.alpha * phase_radius2(f.grid, ix * nv + v)) * g2;
    }
  }
  return total * f.grid.quadrature_weight();
}

DiagnosticsRecorder::DiagnosticsRecorder(const MeanField& engine, EnvelopeSpec weight, int dissipation_stride,
                                         ArcsinGradient mode)
    : engine_(engine), weight_(weight), stride_(dissipation_stride), mode_(mode) {
  if (stride_ < 1) throw ValidationError("diagnostics.dissipation_stride: must be >= 1");
}

const DiagnosticsRecord& DiagnosticsRecorder::record(const DensityField& f, double pauli_min, double pauli_max,
                                                     int picard_iters, int step) {
  DiagnosticsRecord r;
  const ConservedMoments m = conserved_moments(f, f.time);
  r.time = f.time;
  r.mass = m.mass;
  r.momentum = m.momentum;
  r.kinetic_energy = m.energy;
  r.inertia = m.inertia;
  r.entropy = quantum_entropy(f);
  r.pauli_min = pauli_min;
  r.pauli_max = pauli_max;
  r.weighted_grad_norm = weighted_gradient_norm(f, weight_);
  r.picard_iters = picard_iters;
  double rate = 0.0;
  if (records_.empty() || step % stride_ == 0) rate = entropy_dissipation(f, engine_, mode_);
  else rate = rates_.back();
  if (!records_.empty()) {
    r.dissipation_increment = 0.5 * (rates_.back() + rate) * (r.time - records_.back().time);
    r.cumulative_dissipation = records_.back().cumulative_dissipation + r.dissipation_increment;
  }
  rates_.push_back(rate);
  records_.push_back(std::move(r));
  return records_.back();
}

void DiagnosticsRecorder::resume_from(const DiagnosticsRecord& last, double rate) {
  records_.assign(1, last);
  rates_.assign(1, rate);
}

namespace {

struct Poly {
  std::function<double(const Point&)> p;
  std::function<double(const Point&, int)> dp;
  std::function<double(const Point&, int, int)> ddp;
};

std::vector<std::pair<std::string, Poly>> pack_polynomials() {
  const auto zero1 = [](const Point&, int) { return 0.0; };
  const auto zero2 = [](const Point&, int, int) { return 0.0; };
  return {
      {"gauss", {[](const Point&) { return 1.0; }, zero1, zero2}},
      {"v1_gauss", {[](const Point& v) { return v[0]; }, [](const Point&, int i) { return i == 0 ? 1.0 : 0.0; }, zero2}},
      {"v2_gauss", {[](const Point& v) { return v[1]; }, [](const Point&, int i) { return i == 1 ? 1.0 : 0.0; }, zero2}},
      {"v1sq_gauss",
       {[](const Point& v) { return v[0] * v[0]; }, [](const Point& v, int i) { return i == 0 ? 2.0 * v[0] : 0.0; },
        [](const Point&, int i, int j) { return i == 0 && j == 0 ? 2.0 : 0.0; }}},
      {"v1v2_gauss",
       {[](const Point& v) { return v[0] * v[1]; },
        [](const Point& v, int i) { return i == 0 ? v[1] : (i == 1 ? v[0] : 0.0); },
        [](const Point&, int i, int j) { return (i == 0 && j == 1) || (i == 1 && j == 0) ? 1.0 : 0.0; }}},
  };
}

}  // namespace

std::vector<TestFunction> default_test_pack(int dim, bool homogeneous) {
  std::vector<TestFunction> pack;
  for (auto& [name, poly] : pack_polynomials()) {
    TestFunction t;
    t.name = homogeneous ? name : name + "_x";
    t.value = [poly, dim, homogeneous](const Point& x, const Point& v) {
      double v2 = 0.0, x2 = 0.0;
      for (int a = 0; a < dim; ++a) {
        v2 += v[a] * v[a];
        x2 += x[a] * x[a];
      }
      return poly.p(v) * std::exp(-0.5 * v2) * (homogeneous ? 1.0 : std::exp(-0.5 * x2));
    };
    t.derivatives = [poly, dim, homogeneous](const Point& x, const Point& v, double* gv, double* hv, double* gx) {
      double v2 = 0.0, x2 = 0.0;
      for (int a = 0; a < dim; ++a) {
        v2 += v[a] * v[a];
        x2 += x[a] * x[a];
      }
      const double X = homogeneous ? 1.0 : std::exp(-0.5 * x2);
      const double E = std::exp(-0.5 * v2) * X;
      const double p = poly.p(v);
      for (int i = 0; i < dim; ++i) {
        gv[i] = (poly.dp(v, i) - p * v[i]) * E;
        gx[i] = homogeneous ? 0.0 : -x[i] * p * E;
        for (int j = 0; j < dim; ++j)
          hv[i * dim + j] = (poly.ddp(v, i, j) - poly.dp(v, i) * v[j] - poly.dp(v, j) * v[i] - (i == j ? p : 0.0) +
                             p * v[i] * v[j]) *
                            E;
      }
    };
    pack.push_back(std::move(t));
  }
  return pack;
}

WeakResidualReport weak_residual(const std::vector<DensityField>& trajectory, const MeanField& engine, double epsilon,
                                 const std::vector<TestFunction>& pack) {
  WeakResidualReport rep;
  const std::size_t nt = trajectory.size();
  rep.residuals.assign(pack.size(), 0.0);
  rep.scales.assign(pack.size(), 0.0);
  if (nt < 2) {
    if (nt == 0) throw ValidationError("weak_residual: empty trajectory");
    return rep;
  }
  const PhaseGrid& grid = trajectory.front().grid;
  const int dim = grid.dim();
  const int nsym = sym_size(dim);
  const std::size_t nv = grid.velocity_size();
  const std::size_t nx = grid.spatial_size();
  const double w = grid.quadrature_weight();
  const std::size_t np = pack.size();

  // Test-function samples: value, v-gradient, v-Hessian, x-gradient.
  std::vector<double> phi(np * nx * nv), gv(np * nx * nv * dim), hv(np * nx * nv * dim * dim),
      gx(np * nx * nv * dim);
  for (std::size_t k = 0; k < np; ++k)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const Point x = grid.x_node(ix);
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const Point v = grid.velocity().node(iv);
        const std::size_t q = (k * nx + ix) * nv + iv;
        phi[q] = pack[k].value(x, v);
        pack[k].derivatives(x, v, &gv[q * dim], &hv[q * dim * dim], &gx[q * dim]);
      }
    }

  // Right-hand side integrand (signed and absolute) at every stored time.
  std::vector<double> rhs(nt * np, 0.0), rhs_abs(nt * np, 0.0);
  for (std::size_t s = 0; s < nt; ++s) {
    const DensityField& f = trajectory[s];
    if (!(f.grid == grid)) throw ValidationError("weak_residual: trajectory states live on different grids");
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const auto fs = f.slice(ix);
      std::vector<double> F(nv), abar(nsym * nv), div(dim * nv), bt(dim * nv);
      for (std::size_t v = 0; v < nv; ++v) F[v] = fs[v] * (1.0 - fs[v]);
      engine.a_bar(F, abar);
      engine.div_convolution(F, div);
      engine.a_times_gradient(fs, bt);
      for (std::size_t k = 0; k < np; ++k) {
        double acc = 0.0, acc_abs = 0.0;
        for (std::size_t iv = 0; iv < nv; ++iv) {
          const std::size_t q = (k * nx + ix) * nv + iv;
          const Point v = grid.velocity().node(iv);
          double term = 0.0, lap = 0.0, transport = 0.0;
          for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) term += fs[iv] * abar[sym_index(dim, i, j) * nv + iv] * hv[q * dim * dim + i * dim + j];
            term += (fs[iv] * div[i * nv + iv] + bt[i * nv + iv] * F[iv]) * gv[q * dim + i];
            lap += hv[q * dim * dim + i * dim + i];
            transport += v[i] * gx[q * dim + i];
          }
          term += epsilon * fs[iv] * lap + fs[iv] * transport;
          acc += term;
          acc_abs += std::abs(term);
        }
        rhs[s * np + k] += acc * w;
        rhs_abs[s * np + k] += acc_abs * w;
      }
    }
  }
  for (std::size_t k = 0; k < np; ++k) {
    double lhs_end = 0.0, lhs_start = 0.0, start_abs = 0.0;
    for (std::size_t n = 0; n < nx * nv; ++n) {
      const double p = phi[k * nx * nv + n];
      lhs_end += trajectory.back().samples[n] * p;
      lhs_start += trajectory.front().samples[n] * p;
      start_abs += std::abs(trajectory.front().samples[n] * p);
    }
    double integral = 0.0, integral_abs = 0.0;
    for (std::size_t s = 1; s < nt; ++s) {
      const double dt = trajectory[s].time - trajectory[s - 1].time;
      integral += 0.5 * dt * (rhs[(s - 1) * np + k] + rhs[s * np + k]);
      integral_abs += 0.5 * dt * (rhs_abs[(s - 1) * np + k] + rhs_abs[s * np + k]);
    }
    rep.residuals[k] = std::abs((lhs_end - lhs_start) * w - integral);
    rep.scales[k] = start_abs * w + integral_abs;
    rep.max_relative = std::max(rep.max_relative, rep.scales[k] > 0.0 ? rep.residuals[k] / rep.scales[k] : 0.0);
  }
  return rep;
}

}  // namespace lfd
