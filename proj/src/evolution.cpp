#include "lfd/evolution.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace lfd {

void SolverConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ValidationError("solver.epsilon: must be non-negative");
  if (!(dt > 0.0)) throw ValidationError("solver.dt: must be positive");
  if (!(t_end > 0.0)) throw ValidationError("solver.t_end: must be positive");
  if (!(picard_tol > 0.0)) throw ValidationError("solver.picard_tol: must be positive");
  if (picard_max_iters < 1) throw ValidationError("solver.picard_max_iters: must be >= 1");
  if (!(relaxation > 0.0 && relaxation <= 1.0)) throw ValidationError("solver.relaxation: must lie in (0, 1]");
  if (kernel_index < 1) throw ValidationError("solver.kernel_index: must be >= 1");
  if (stencil_order != 2 && stencil_order != 4) throw ValidationError("solver.stencil_order: must be 2 or 4");
  if (!(linear_tol > 0.0) || linear_max_iters < 1) throw ValidationError("solver.linear_tol: invalid solver controls");
  for (const auto& [e, n] : viscosity_ladder)
    if (!(e >= 0.0) || n < 1) throw ValidationError("solver.viscosity_ladder: entries need epsilon >= 0 and n >= 1");
}

int step_count(double t0, double t_end, double dt) {
  return std::max(0, static_cast<int>(std::llround((t_end - t0) / dt)));
}

namespace {

using Triplet = Eigen::Triplet<double>;

struct Entry {
  int row;
  int col;
  std::size_t field;
  double coef;
};

std::size_t csr_position(const SparseMatrix& m, int row, int col) {
  const auto* outer = m.outerIndexPtr();
  const auto* inner = m.innerIndexPtr();
  const auto* begin = inner + outer[row];
  const auto* end = inner + outer[row + 1];
  const auto* it = std::lower_bound(begin, end, col);
  if (it == end || *it != col) throw RuntimeFailure("operator pattern: missing entry");
  return static_cast<std::size_t>(it - inner);
}

}  // namespace

OperatorPattern::OperatorPattern(const VelocityGrid& grid, int stencil_order) : grid_(grid), order_(stencil_order) {
  const int dim = grid.dim();
  const int nsym = sym_size(dim);
  const std::size_t nv = grid.size();
  field_size_ = static_cast<std::size_t>(nsym + dim) * nv;
  for (int a = 0; a < dim; ++a) gradient_.push_back(gradient_matrix(grid, a, stencil_order));

  std::vector<Entry> entries;
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      const std::size_t c = static_cast<std::size_t>(sym_index(dim, i, j));
      const SparseMatrix& di = gradient_[i];
      const SparseMatrix& dj = gradient_[j];
      for (std::size_t v = 0; v < nv; ++v) {
        for (SparseMatrix::InnerIterator p(di, static_cast<Eigen::Index>(v)); p; ++p)
          for (SparseMatrix::InnerIterator q(dj, static_cast<Eigen::Index>(v)); q; ++q)
            entries.push_back({static_cast<int>(p.col()), static_cast<int>(q.col()), c * nv + v, -p.value() * q.value()});
      }
    }
    for (std::size_t v = 0; v < nv; ++v)
      for (SparseMatrix::InnerIterator p(gradient_[i], static_cast<Eigen::Index>(v)); p; ++p)
        entries.push_back({static_cast<int>(p.col()), static_cast<int>(v), (nsym + i) * nv + v, -p.value()});
  }
  const SparseMatrix lap = neumann_laplacian(grid);

  std::vector<Triplet> shape;
  shape.reserve(entries.size() + lap.nonZeros() + nv);
  for (const Entry& e : entries) shape.emplace_back(e.row, e.col, 1.0);
  for (int k = 0; k < lap.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(lap, k); it; ++it) shape.emplace_back(it.row(), it.col(), 1.0);
  for (std::size_t v = 0; v < nv; ++v) shape.emplace_back(static_cast<int>(v), static_cast<int>(v), 1.0);
  structure_.resize(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
  structure_.setFromTriplets(shape.begin(), shape.end());
  structure_.makeCompressed();

  const auto nnz = static_cast<Eigen::Index>(structure_.nonZeros());
  laplacian_ = Eigen::VectorXd::Zero(nnz);
  identity_ = Eigen::VectorXd::Zero(nnz);
  for (int k = 0; k < lap.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(lap, k); it; ++it)
      laplacian_[static_cast<Eigen::Index>(csr_position(structure_, it.row(), it.col()))] += it.value();
  for (std::size_t v = 0; v < nv; ++v)
    identity_[static_cast<Eigen::Index>(csr_position(structure_, static_cast<int>(v), static_cast<int>(v)))] = 1.0;

  std::vector<Triplet> map;
  map.reserve(entries.size());
  for (const Entry& e : entries)
    map.emplace_back(static_cast<int>(csr_position(structure_, e.row, e.col)), static_cast<int>(e.field), e.coef);
  map_.resize(nnz, static_cast<Eigen::Index>(field_size_));
  map_.setFromTriplets(map.begin(), map.end());
}

Eigen::VectorXd OperatorPattern::values(const Eigen::VectorXd& fields, double epsilon) const {
  Eigen::VectorXd out = map_ * fields;
  if (epsilon != 0.0) out += epsilon * laplacian_;
  return out;
}

SparseMatrix FrozenOperator::matrix(std::size_t ix) const {
  SparseMatrix m = pattern->structure();
  Eigen::Map<Eigen::VectorXd>(m.valuePtr(), m.nonZeros()) = pattern->values(fields[ix], epsilon);
  return m;
}

Eigen::VectorXd FrozenOperator::apply(std::size_t ix, const Eigen::VectorXd& f) const {
  return matrix(ix) * f + constant[ix];
}

CollisionModel::CollisionModel(const KernelTable& table, int stencil_order, double logit_scale)
    : engine_(table, stencil_order),
      pattern_(std::make_shared<OperatorPattern>(table.grid(), stencil_order)),
      logit_scale_(logit_scale),
      logit_shift_(std::max(logit_scale, kLogitFloor)) {
  if (!(logit_scale >= 0.0)) throw ValidationError("solver.logit_scale: must be non-negative");
}

void CollisionModel::slice_fields(std::span<const double> g, Eigen::VectorXd& fields, Eigen::VectorXd& constant) const {
  const VelocityGrid& vg = table().grid();
  const int dim = vg.dim();
  const int nsym = sym_size(dim);
  const std::size_t nv = vg.size();
  const auto& grad = pattern_->gradients();
  fields.resize(static_cast<Eigen::Index>(pattern_->field_size()));
  std::vector<double> w(nv);
  Eigen::VectorXd logit(static_cast<Eigen::Index>(nv));
  for (std::size_t v = 0; v < nv; ++v) {
    w[v] = g[v] * (1.0 - g[v]);
    // Shifted by the blend scale so the map g -> logit stays Lipschitz near 0 and 1;
    // otherwise sign flips of noise-level tails make Picard cycle.
    const double c = std::clamp(g[v], 0.0, 1.0);
    logit[static_cast<Eigen::Index>(v)] = std::log(c + logit_shift_) - std::log(1.0 - c + logit_shift_);
  }
  // X = F D log(g / (1 - g)) where F is well above solver noise, D g in the
  // far tails; both are lattice forms of the gradient of g.
  Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(nv));
  const double tau2 = logit_scale_ * logit_scale_;
  std::vector<double> x(dim * nv);
  for (int i = 0; i < dim; ++i) {
    Eigen::Map<Eigen::VectorXd> xi(x.data() + i * nv, static_cast<Eigen::Index>(nv));
    xi = grad[i] * logit;
    const Eigen::VectorXd dg = grad[i] * gv;
    for (std::size_t v = 0; v < nv; ++v) {
      const double chi = tau2 > 0.0 ? w[v] * w[v] / (w[v] * w[v] + tau2) : 1.0;
      xi[v] = chi * w[v] * xi[v] + (1.0 - chi) * dg[v];
    }
  }
  std::span<double> all(fields.data(), pattern_->field_size());
  std::span<double> abar = all.subspan(0, nsym * nv);
  engine_.a_bar(w, abar);
  std::span<double> u = all.subspan(nsym * nv, dim * nv);
  engine_.a_times_vector_field(x, u);
  for (int i = 0; i < dim; ++i)
    for (std::size_t v = 0; v < nv; ++v) u[i * nv + v] *= g[v];

  // Correction abar (X - D g), frozen at g.
  std::vector<double> corr(dim * nv);
  for (int j = 0; j < dim; ++j) {
    Eigen::Map<Eigen::VectorXd> cj(corr.data() + j * nv, static_cast<Eigen::Index>(nv));
    cj = -(grad[j] * gv);
    for (std::size_t v = 0; v < nv; ++v) cj[v] += x[j * nv + v];
  }
  constant = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nv));
  Eigen::VectorXd flux(static_cast<Eigen::Index>(nv));
  for (int i = 0; i < dim; ++i) {
    for (std::size_t v = 0; v < nv; ++v) {
      double acc = u[i * nv + v];
      for (int j = 0; j < dim; ++j) acc -= abar[sym_index(dim, i, j) * nv + v] * corr[j * nv + v];
      flux[static_cast<Eigen::Index>(v)] = acc;
    }
    constant += grad[i].transpose() * flux;
  }
}

FrozenOperator assemble_frozen(const DensityField& g, const CollisionModel& model, double epsilon) {
  if (!(g.grid.velocity() == model.table().grid())) throw ValidationError("assemble_frozen: grid/table mismatch");
  FrozenOperator op;
  op.pattern = model.pattern();
  op.epsilon = epsilon;
  op.spatial_size = g.grid.spatial_size();
  op.fields.resize(op.spatial_size);
  op.constant.resize(op.spatial_size);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t ix = 0; ix < op.spatial_size; ++ix) {
    const auto gs = g.slice(ix);
    std::vector<double> clamped(gs.begin(), gs.end());
    for (double& v : clamped) v = std::clamp(v, 0.0, 1.0);
    model.slice_fields(clamped, op.fields[ix], op.constant[ix]);
  }
  return op;
}

namespace {

// Clamps to [0, 1]; returns the total absolute change.
double clamp_samples(std::vector<double>& samples) {
  double clamped = 0.0;
  for (double& v : samples) {
    const double c = std::clamp(v, 0.0, 1.0);
    clamped += std::abs(c - v);
    v = c;
  }
  return clamped;
}

struct SliceSolve {
  int iterations = 0;
  double residual = 0.0;
};

// Solves (I - dt L) x = rhs on one slice; x holds the initial guess on entry.
SliceSolve solve_slice(const OperatorPattern& pattern, const Eigen::VectorXd& fields, double epsilon, double dt,
                       const Eigen::VectorXd& rhs, Eigen::VectorXd& x, const SolverConfig& cfg) {
  SliceSolve out;
  if (rhs.lpNorm<Eigen::Infinity>() == 0.0) {
    x.setZero();
    return out;
  }
  SparseMatrix a = pattern.structure();
  Eigen::Map<Eigen::VectorXd> vals(a.valuePtr(), a.nonZeros());
  vals = pattern.identity_values() - dt * pattern.values(fields, epsilon);
  Eigen::BiCGSTAB<SparseMatrix, Eigen::DiagonalPreconditioner<double>> solver;
  solver.setTolerance(cfg.linear_tol);
  solver.setMaxIterations(cfg.linear_max_iters);
  solver.compute(a);
  Eigen::VectorXd sol = solver.solveWithGuess(rhs, x);
  const double res = (a * sol - rhs).norm() / rhs.norm();
  if (!sol.allFinite() || res > std::max(1e-10, 100.0 * cfg.linear_tol)) {
    std::ostringstream msg;
    msg << "parabolic substep: linear solver did not converge (relative residual " << res << " after "
        << solver.iterations() << " iterations)";
    throw RuntimeFailure(msg.str());
  }
  x = std::move(sol);
  out.iterations = static_cast<int>(solver.iterations());
  out.residual = res;
  return out;
}

}  // namespace

DensityField parabolic_substep(const DensityField& f, const FrozenOperator& op, double dt, const SolverConfig& cfg,
                               SubstepReport* report, const DensityField* guess) {
  if (!op.pattern || !(f.grid.velocity() == op.pattern->grid()) || f.grid.spatial_size() != op.spatial_size)
    throw ValidationError("parabolic_substep: operator assembled on a different grid");
  if (dt < 0.0) throw ValidationError("parabolic_substep: dt must be non-negative");
  const std::size_t nv = f.grid.velocity_size();
  const std::size_t nx = op.spatial_size;
  DensityField out(f.grid, f.time);
  if (dt == 0.0) {
    out.samples = f.samples;
    if (report) {
      const auto [lo, hi] = std::minmax_element(f.samples.begin(), f.samples.end());
      *report = SubstepReport{*lo, *hi, 0.0, 0, 0.0};
    }
    return out;
  }
  std::vector<SliceSolve> solves(nx);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const auto fs = f.slice(ix);
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(fs.data(), static_cast<Eigen::Index>(nv)) +
                          dt * op.constant[ix];
    const auto gs = guess ? guess->slice(ix) : fs;
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(gs.data(), static_cast<Eigen::Index>(nv));
    solves[ix] = solve_slice(*op.pattern, op.fields[ix], op.epsilon, dt, rhs, x, cfg);
    std::copy(x.data(), x.data() + nv, out.slice(ix).begin());
  }
  SubstepReport r;
  r.pre_clamp_min = *std::min_element(out.samples.begin(), out.samples.end());
  r.pre_clamp_max = *std::max_element(out.samples.begin(), out.samples.end());
  if (cfg.clamp) r.clamped_mass = clamp_samples(out.samples) * f.grid.quadrature_weight();
  for (const auto& s : solves) {
    r.linear_iterations = std::max(r.linear_iterations, s.iterations);
    r.linear_residual = std::max(r.linear_residual, s.residual);
  }
  if (report) *report = r;
  return out;
}

namespace {

double l1(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

}  // namespace

namespace {
constexpr double kPicardDivergenceFactor = 100.0;
}  // namespace

std::pair<DensityField, PicardReport> picard_fixed_point(const DensityField& f_prev, const CollisionModel& model,
                                                         const SolverConfig& cfg) {
  for (double v : f_prev.samples)
    if (!std::isfinite(v)) throw ValidationError("picard_fixed_point: non-finite sample");
  PicardReport report;
  const double scale = l1(f_prev.samples);
  DensityField g = f_prev;
  if (scale == 0.0) {
    report.iterations = 1;
    return {g, report};
  }
  for (int k = 1; k <= cfg.picard_max_iters; ++k) {
    const FrozenOperator op = assemble_frozen(g, model, cfg.epsilon);
    SubstepReport sub;
    DensityField next = parabolic_substep(f_prev, op, cfg.dt, cfg, &sub, &g);
    if (cfg.relaxation != 1.0)
      for (std::size_t i = 0; i < next.samples.size(); ++i)
        next.samples[i] = cfg.relaxation * next.samples[i] + (1.0 - cfg.relaxation) * g.samples[i];
    const double res = l1_distance(next.samples, g.samples) / scale;
    if (!report.residuals.empty() && report.residuals.back() > 0.0)
      report.contraction_ratios.push_back(res / report.residuals.back());
    report.residuals.push_back(res);
    report.iterations = k;
    report.final_residual = res;
    report.substep = sub;
    g = std::move(next);
    if (res < cfg.picard_tol) {
      g.time = f_prev.time;
      return {g, report};
    }
    // Runaway growth ends at spurious saturated states (f = 0 or 1), which are
    // exact fixed points of the clamped map; stop before reaching one.
    const double best = *std::min_element(report.residuals.begin(), report.residuals.end());
    if (res > kPicardDivergenceFactor * best) break;
  }
  std::ostringstream msg;
  msg << "picard: no convergence after " << report.iterations << " iterations (dt may be too large); residuals:";
  for (double r : report.residuals) msg << ' ' << r;
  throw RuntimeFailure(msg.str());
}

namespace {

// Four-point Lagrange weights at fractional position theta in [0, 1) of the cell [0, 1].
std::array<double, 4> lagrange4(double t) {
  return {-t * (t - 1.0) * (t - 2.0) / 6.0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
          -(t + 1.0) * t * (t - 2.0) / 2.0, (t + 1.0) * t * (t - 1.0) / 6.0};
}

}  // namespace

DensityField transport_step(const DensityField& f, double dt, TransportReport* report, bool clamp) {
  TransportReport r;
  if (f.grid.homogeneous() || dt == 0.0) {
    if (report) {
      const auto [lo, hi] = std::minmax_element(f.samples.begin(), f.samples.end());
      r.pre_clamp_min = *lo;
      r.pre_clamp_max = *hi;
      *report = r;
    }
    return f;
  }
  const SpatialGrid& sg = *f.grid.spatial();
  const VelocityGrid& vg = f.grid.velocity();
  const int dim = f.grid.dim();
  const int p = sg.points_per_axis();
  const std::size_t nv = vg.size();
  const std::size_t nx = sg.size();
  const bool periodic = sg.topology() == Topology::periodic;
  const double mass0 = f.mass();
  DensityField cur = f;
  DensityField next(f.grid, f.time);
  for (int a = 0; a < dim; ++a) {
    const std::size_t stride = sg.stride(a);
#pragma omp parallel for schedule(static)
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const double s = vg.node(iv)[a] * dt / sg.spacing();
      const double fl = std::floor(-s);
      const int j0 = static_cast<int>(fl);
      const auto w = lagrange4(-s - fl);
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const int i = sg.multi_index(ix)[a];
        double val = 0.0;
        for (int k = 0; k < 4; ++k) {
          int j = i + j0 - 1 + k;
          if (periodic) {
            j = ((j % p) + p) % p;
          } else if (j < 0 || j >= p) {
            continue;
          }
          const std::size_t jx = ix + (static_cast<long>(j) - i) * static_cast<long>(stride);
          val += w[k] * cur.samples[jx * nv + iv];
        }
        next.samples[ix * nv + iv] = val;
      }
    }
    std::swap(cur.samples, next.samples);
  }
  r.leaked_mass = periodic ? 0.0 : mass0 - cur.mass();
  r.pre_clamp_min = *std::min_element(cur.samples.begin(), cur.samples.end());
  r.pre_clamp_max = *std::max_element(cur.samples.begin(), cur.samples.end());
  if (clamp) r.clamped_mass = clamp_samples(cur.samples) * f.grid.quadrature_weight();
  if (report) *report = r;
  return cur;
}

DensityField advance(const DensityField& f, const CollisionModel& model, const SolverConfig& cfg, StepReport* report) {
  StepReport r;
  DensityField cur = f;
  if (f.grid.homogeneous()) {
    auto [next, pr] = picard_fixed_point(cur, model, cfg);
    r.picard = std::move(pr);
    cur = std::move(next);
  } else if (cfg.splitting == Splitting::strang) {
    TransportReport t1, t2;
    cur = transport_step(cur, 0.5 * cfg.dt, &t1, cfg.clamp);
    auto [next, pr] = picard_fixed_point(cur, model, cfg);
    r.picard = std::move(pr);
    cur = transport_step(next, 0.5 * cfg.dt, &t2, cfg.clamp);
    r.transport.leaked_mass = t1.leaked_mass + t2.leaked_mass;
    r.transport.clamped_mass = t1.clamped_mass + t2.clamped_mass;
    r.transport.pre_clamp_min = std::min(t1.pre_clamp_min, t2.pre_clamp_min);
    r.transport.pre_clamp_max = std::max(t1.pre_clamp_max, t2.pre_clamp_max);
  } else {
    cur = transport_step(cur, cfg.dt, &r.transport, cfg.clamp);
    auto [next, pr] = picard_fixed_point(cur, model, cfg);
    r.picard = std::move(pr);
    cur = std::move(next);
  }
  cur.time = f.time + cfg.dt;
  if (report) *report = std::move(r);
  return cur;
}

DensityField run_trajectory(const SolverConfig& cfg, const DensityField& f0, const CollisionModel& model,
                            const StepObserver& observer) {
  cfg.validate();
  const int steps = step_count(f0.time, cfg.t_end, cfg.dt);
  if (steps < 1) throw ValidationError("run_trajectory: t_end must exceed the start time by at least dt");
  const double t0 = f0.time;
  DensityField cur = f0;
  for (int s = 1; s <= steps; ++s) {
    StepReport r;
    cur = advance(cur, model, cfg, &r);
    // Avoid accumulating round-off in the clock.
    cur.time = t0 + s * cfg.dt;
    if (observer) observer(cur, r, s);
  }
  return cur;
}

}  // namespace lfd
