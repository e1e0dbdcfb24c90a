#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lfd/evolution.hpp"
#include "lfd/initial_data.hpp"
#include "dense_oracle.hpp"

using namespace lfd;

namespace {

const CrossSectionSpec kCoulomb = CrossSectionSpec::power_law(2, -3.0);

PhaseGrid torus(double vmax, int m, double extent, int p) {
  GridParameters gp;
  gp.dim = 2;
  gp.v_max = vmax;
  gp.v_points = m;
  gp.homogeneous = false;
  gp.x_extent = extent;
  gp.x_points = p;
  gp.topology = Topology::periodic;
  return build_phase_grid(gp);
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

double l1(const std::vector<double>& a) {
  double s = 0.0;
  for (double x : a) s += std::abs(x);
  return s;
}

DensityField gaussian_datum(const PhaseGrid& g, double amplitude, double drift) {
  AnalyticDatum d;
  d.family = "double-gaussian";
  d.amplitude = amplitude;
  d.drift = {drift, 0.5 * drift};
  return make_initial_datum(g, d);
}


}  // namespace

TEST_CASE("solver config validation") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  c.dt = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SolverConfig{};
  c.picard_max_iters = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SolverConfig{};
  c.picard_tol = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(step_count(0.0, 0.5, 1e-3) == 500);
}

TEST_CASE("frozen operator action matches dense flux assembly on 8x8 to 1e-12") {
  const VelocityGrid vg(2, 2.0, 8);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int order : {2, 4})
    for (double tau : {0.0, 1e-8, 0.05}) {
      const CollisionModel model(table, order, tau);
      DensityField g{PhaseGrid(vg)};
      for (auto& s : g.samples) s = u(rng);
      Eigen::VectorXd f(static_cast<Eigen::Index>(vg.size()));
      for (auto& s : f) s = u(rng);
      const FrozenOperator op = assemble_frozen(g, model, 0.05);
      const Eigen::VectorXd got = op.apply(0, f);
      const Eigen::VectorXd want = dense_reference(table, order, tau, g.samples, f, 0.05);
      CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("zero g leaves only eps times the Laplacian") {
  const VelocityGrid vg(2, 2.0, 8);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const FrozenOperator op = assemble_frozen(DensityField(PhaseGrid(vg)), model, 0.3);
  const Eigen::MatrixXd lap(neumann_laplacian(vg));
  CHECK((Eigen::MatrixXd(op.matrix(0)) - 0.3 * lap).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(op.constant[0].cwiseAbs().maxCoeff() == 0.0);
  // constants are annihilated
  CHECK(op.apply(0, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(vg.size()), 0.7)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("property: collision operator columns sum to zero (discrete divergence theorem)") {
  const VelocityGrid vg(2, 3.0, 12);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const DensityField g = gaussian_datum(PhaseGrid(vg), 0.5, 0.5);
  const FrozenOperator op = assemble_frozen(g, model, 0.05);
  const Eigen::MatrixXd m(op.matrix(0));
  const double scale = m.cwiseAbs().maxCoeff();
  CHECK(m.colwise().sum().cwiseAbs().maxCoeff() <= 1e-12 * scale);
  CHECK(std::abs(op.constant[0].sum()) <= 1e-12 * op.constant[0].cwiseAbs().maxCoeff());
}

TEST_CASE("parabolic substep with dt = 0 is the identity") {
  const VelocityGrid vg(2, 3.0, 12);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const DensityField f = gaussian_datum(PhaseGrid(vg), 0.5, 0.5);
  const DensityField out = parabolic_substep(f, assemble_frozen(f, model, 0.05), 0.0, SolverConfig{});
  CHECK(l1(out.samples, f.samples) == 0.0);
}

TEST_CASE("implicit heat steps with g = 0 follow the Gaussian heat kernel") {
  // f0 = e^{-|v|^2}; exact solution e^{-|v|^2/(1+4 eps t)} / (1 + 4 eps t).
  const double eps = 0.5, t_end = 0.1;
  const VelocityGrid vg(2, 6.0, 97);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const PhaseGrid pg(vg);
  DensityField zero(pg);
  const FrozenOperator op = assemble_frozen(zero, model, eps);
  const double s = 1 + 4 * eps * t_end;
  std::vector<double> exact(vg.size());
  for (std::size_t v = 0; v < vg.size(); ++v) exact[v] = std::exp(-vg.norm2(v) / s) / s;
  // The lattice Laplacian leaves an O(h^2) floor, so the dt part is measured by
  // self-convergence between successive step counts.
  double prev = INFINITY;
  std::vector<std::vector<double>> finals;
  for (int steps : {10, 20, 40}) {
    DensityField f(pg);
    for (std::size_t v = 0; v < vg.size(); ++v) f.samples[v] = std::exp(-vg.norm2(v));
    for (int k = 0; k < steps; ++k) f = parabolic_substep(f, op, t_end / steps, SolverConfig{});
    const double err = l1(f.samples, exact) / l1(exact);
    CHECK(err < prev);
    prev = err;
    finals.push_back(f.samples);
  }
  CHECK(prev < 0.01);
  const double ratio = l1(finals[0], finals[1]) / l1(finals[1], finals[2]);
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("constant state is a fixed point: one Picard iteration, unchanged") {
  const VelocityGrid vg(2, 3.0, 16);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  DensityField f{PhaseGrid(vg)};
  std::fill(f.samples.begin(), f.samples.end(), 0.3);
  SolverConfig cfg;
  cfg.epsilon = 0.05;
  auto [next, report] = picard_fixed_point(f, model, cfg);
  CHECK(report.iterations == 1);
  for (double x : next.samples) CHECK(x == doctest::Approx(0.3).epsilon(1e-13));
}

TEST_CASE("property: collision step conserves mass and momentum, keeps Picard residuals decreasing") {
  const VelocityGrid vg(2, 4.0, 32);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  DensityField f = gaussian_datum(PhaseGrid(vg), 0.45, 0.6);
  SolverConfig cfg;
  cfg.dt = 2e-3;
  for (int step = 0; step < 5; ++step) {
    const double m0 = f.mass();
    std::vector<double> p0(2, 0.0), p1(2, 0.0);
    for (std::size_t v = 0; v < vg.size(); ++v)
      for (int a = 0; a < 2; ++a) p0[a] += f.samples[v] * vg.node(v)[a] * vg.cell_volume();
    StepReport report;
    f = advance(f, model, cfg, &report);
    for (std::size_t v = 0; v < vg.size(); ++v)
      for (int a = 0; a < 2; ++a) p1[a] += f.samples[v] * vg.node(v)[a] * vg.cell_volume();
    CHECK(std::abs(f.mass() - m0) <= 1e-10 * m0);
    CHECK(std::hypot(p1[0] - p0[0], p1[1] - p0[1]) <= 1e-8 * m0);
    const auto& r = report.picard.residuals;
    for (std::size_t k = 2; k < r.size(); ++k) CHECK(r[k] < r[k - 1]);
    for (double c : report.picard.contraction_ratios) CHECK(c < 1.0);
    CHECK(report.picard.substep.pre_clamp_min >= -1e-8);
    CHECK(report.picard.substep.pre_clamp_max <= 1.0 + 1e-8);
  }
  CHECK(f.time == doctest::Approx(0.01));
}

TEST_CASE("halving dt does not increase Picard iterations") {
  const VelocityGrid vg(2, 4.0, 32);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const DensityField f = gaussian_datum(PhaseGrid(vg), 0.45, 0.6);
  int prev = 1 << 20;
  for (double dt : {8e-3, 4e-3, 2e-3, 1e-3}) {
    SolverConfig cfg;
    cfg.dt = dt;
    const int iters = picard_fixed_point(f, model, cfg).second.iterations;
    CHECK(iters <= prev);
    prev = iters;
  }
}

TEST_CASE("Picard cap reached raises a runtime failure carrying the residuals") {
  const VelocityGrid vg(2, 4.0, 32);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const DensityField f = gaussian_datum(PhaseGrid(vg), 0.45, 0.6);
  SolverConfig cfg;
  cfg.dt = 1e-2;
  cfg.picard_max_iters = 2;
  try {
    (void)picard_fixed_point(f, model, cfg);
    FAIL("expected a failure");
  } catch (const RuntimeFailure& e) {
    CHECK(std::string(e.what()).find("picard") != std::string::npos);
    CHECK(std::string(e.what()).find("residual") != std::string::npos);
  }
}

TEST_CASE("transport: identity in homogeneous mode") {
  const PhaseGrid g{VelocityGrid(2, 3.0, 8)};
  const DensityField f = gaussian_datum(g, 0.5, 0.3);
  CHECK(l1(transport_step(f, 0.37).samples, f.samples) == 0.0);
}

TEST_CASE("transport: exact lattice shifts are index rotations") {
  // h = 1, dx = 1/2, dt = 1/2: every velocity moves an integer number of cells.
  const PhaseGrid g = torus(2.0, 5, 4.0, 8);
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DensityField f(g);
  for (auto& s : f.samples) s = u(rng);
  const DensityField out = transport_step(f, 0.5);
  const SpatialGrid& sg = *g.spatial();
  const VelocityGrid& vg = g.velocity();
  for (std::size_t ix = 0; ix < sg.size(); ++ix)
    for (std::size_t iv = 0; iv < vg.size(); ++iv) {
      auto src = sg.multi_index(ix);
      for (int a = 0; a < 2; ++a) src[a] = ((src[a] - static_cast<int>(vg.node(iv)[a])) % 8 + 8) % 8;
      CHECK(out.samples[ix * vg.size() + iv] == f.samples[sg.flat_index(src) * vg.size() + iv]);
    }
  CHECK(out.mass() == doctest::Approx(f.mass()).epsilon(1e-14));
}

TEST_CASE("transport: smooth periodic datum matches free streaming, mass exact") {
  const double L = 4.0;
  const PhaseGrid g = torus(1.5, 7, L, 32);
  const SpatialGrid& sg = *g.spatial();
  const VelocityGrid& vg = g.velocity();
  auto profile = [&](const Point& x, const Point& v) {
    return (0.3 + 0.2 * std::sin(2 * std::numbers::pi * x[0] / L) * std::cos(2 * std::numbers::pi * x[1] / L)) *
           std::exp(-(v[0] * v[0] + v[1] * v[1]));
  };
  DensityField f(g);
  for (std::size_t ix = 0; ix < sg.size(); ++ix)
    for (std::size_t iv = 0; iv < vg.size(); ++iv) f.samples[ix * vg.size() + iv] = profile(sg.node(ix), vg.node(iv));
  const double m0 = f.mass();
  const int steps = 40;
  const double t = 2.0;
  for (int k = 0; k < steps; ++k) f = transport_step(f, t / steps);
  std::vector<double> exact(f.samples.size());
  for (std::size_t ix = 0; ix < sg.size(); ++ix)
    for (std::size_t iv = 0; iv < vg.size(); ++iv) {
      Point x = sg.node(ix);
      const Point v = vg.node(iv);
      for (int a = 0; a < 2; ++a) x[a] -= v[a] * t;
      exact[ix * vg.size() + iv] = profile(x, v);
    }
  CHECK(l1(f.samples, exact) / l1(exact) <= 1e-3);
  CHECK(std::abs(f.mass() - m0) <= 1e-12 * m0);
}

TEST_CASE("Lie and Strang splittings differ at second order in dt") {
  const PhaseGrid g = torus(3.0, 12, 6.0, 8);
  const CollisionModel model(build_kernel_table(g.velocity(), kCoulomb, KernelConfig(2, 8)), 4);
  AnalyticDatum d;
  d.amplitude = 0.5;
  d.x_width = 1.5;
  const DensityField f0 = make_initial_datum(g, d);
  std::vector<double> gaps;
  for (double dt : {0.04, 0.02, 0.01}) {
    SolverConfig strang, lie;
    strang.dt = lie.dt = dt;
    lie.splitting = Splitting::lie;
    const DensityField a = advance(f0, model, strang);
    lie.dt = dt / 2;
    const DensityField b = advance(advance(f0, model, lie), model, lie);
    gaps.push_back(l1(a.samples, b.samples) / l1(f0.samples));
  }
  for (std::size_t k = 1; k < gaps.size(); ++k) {
    MESSAGE("dt ratio gap " << gaps[k - 1] / gaps[k]);
    CHECK(gaps[k - 1] / gaps[k] >= 3.2);
  }
}

TEST_CASE("run_trajectory: t_end = dt gives one step, reruns are bit-identical") {
  const VelocityGrid vg(2, 4.0, 24);
  const CollisionModel model(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const DensityField f0 = gaussian_datum(PhaseGrid(vg), 0.45, 0.6);
  SolverConfig cfg;
  cfg.dt = 1e-3;
  cfg.t_end = 1e-3;
  int calls = 0;
  const DensityField one = run_trajectory(cfg, f0, model, [&](const DensityField&, const StepReport&, int) { ++calls; });
  CHECK(calls == 1);
  CHECK(one.time == doctest::Approx(1e-3));
  cfg.t_end = 5e-3;
  const DensityField a = run_trajectory(cfg, f0, model);
  const DensityField b = run_trajectory(cfg, f0, model);
  CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(double)) == 0);
}
