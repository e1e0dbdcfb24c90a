// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dense_oracle.hpp"
#include "lfd/diagnostics.hpp"
#include "lfd/evolution.hpp"
#include "lfd/initial_data.hpp"
#include "lfd/mean_field.hpp"

using namespace lfd;

namespace {

// pinned tolerances
constexpr double kMassTol = 1e-8;
constexpr double kMomentumTol = 1e-8;
constexpr double kEnergyTol = 0.02;
constexpr double kInertiaTol = 0.05;
constexpr double kEntropyTol = 1e-3;
constexpr double kPauliTol = 1e-8;
constexpr double kClampedTol = 1e-8;
constexpr double kStationaryL1Tol = 1e-3;
constexpr double kStationaryDTol = 1e-6;
constexpr double kOracleTol = 1e-12;
constexpr double kHalvingLo = 0.4, kHalvingHi = 0.6;

const CrossSectionSpec kCoulomb = CrossSectionSpec::power_law(2, -3.0);

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct DefaultRun {
  std::vector<DiagnosticsRecord> records;
  double pre_min = INFINITY, pre_max = -INFINITY, clamped = 0.0;
  double energy_dev = 0.0, literal_dev = 0.0;
  int max_picard = 0;
};

// default desk run: homogeneous, V = 6, gamma = -3, n = 8, eps = 0.05, dt = 1e-3, T = 0.5
DefaultRun default_run(int m) {
  GridParameters gp;
  gp.v_points = m;
  const PhaseGrid grid = build_phase_grid(gp);
  const CollisionModel model(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, 8)), 4);
  SolverConfig cfg;
  const DensityField f0 = regularize_initial_datum(make_initial_datum(grid, AnalyticDatum{}), 8);
  DiagnosticsRecorder rec(model.mean_field(), EnvelopeSpec{0.5, 0, 1}, 1);
  rec.record(f0, 0, 1, 0, 0);
  DefaultRun out;
  run_trajectory(cfg, f0, model, [&](const DensityField& g, const StepReport& r, int s) {
    const auto& sub = r.picard.substep;
    out.pre_min = std::min({out.pre_min, sub.pre_clamp_min});
    out.pre_max = std::max({out.pre_max, sub.pre_clamp_max});
    out.clamped += std::abs(sub.clamped_mass) + std::abs(r.transport.clamped_mass);
    out.max_picard = std::max(out.max_picard, r.picard.iterations);
    rec.record(g, sub.pre_clamp_min, sub.pre_clamp_max, r.picard.iterations, s);
  });
  out.records = rec.records();
  out.energy_dev = drift_check(out.records, cfg.epsilon, 2).energy_final_rel_dev;
  out.literal_dev = drift_check(out.records, cfg.epsilon, 2, 2.0).energy_final_rel_dev;
  return out;
}

void criteria_1_2_3_5_6() {
  const auto t0 = std::chrono::steady_clock::now();
  const DefaultRun run = default_run(48);
  const auto& R = run.records;
  const double mass0 = R.front().mass;

  double mass_drift = 0.0, mom_drift = 0.0;
  for (const auto& r : R) {
    mass_drift = std::max(mass_drift, std::abs(r.mass - mass0) / mass0);
    for (std::size_t i = 0; i < r.momentum.size(); ++i)
      mom_drift = std::max(mom_drift, std::abs(r.momentum[i] - R.front().momentum[i]));
  }
  std::printf("default run M=48: %zu records, max picard %d, %.1fs\n", R.size() - 1, run.max_picard, seconds_since(t0));
  report(1, mass_drift <= kMassTol, fmt("max relative mass drift %.3e (tol %.0e)", mass_drift, kMassTol));
  report(2, mom_drift <= kMomentumTol * mass0,
         fmt("max |momentum change| %.3e (tol %.0e * mass = %.3e)", mom_drift, kMomentumTol, kMomentumTol * mass0));

  // energy law with constant 2N, then the same at M = 32 to see the deviation shrink under refinement
  const DefaultRun coarse = default_run(32);
  report(3, run.energy_dev <= kEnergyTol && run.energy_dev < coarse.energy_dev,
         fmt("energy deviation %.3e at M=48 (tol %.0e), %.3e at M=32 (must shrink); constant 2N", run.energy_dev,
             kEnergyTol, coarse.energy_dev));
  std::printf("    info: with constant 2 in place of 2N the deviation is %.3e\n", run.literal_dev);

  const EntropyReport e = entropy_inequality_check(R);
  const double etol = kEntropyTol * std::abs(e.initial_entropy);
  report(5, e.max_slack <= etol, fmt("max entropy slack %.3e (tol %.3e), S(0) = %.6e", e.max_slack, etol, e.initial_entropy));

  report(6, run.pre_min >= -kPauliTol && run.pre_max <= 1 + kPauliTol && run.clamped <= kClampedTol,
         fmt("pre-clamp min %.3e, max - 1 %.3e (tol %.0e); clamped mass %.3e (tol %.0e)", run.pre_min,
             run.pre_max - 1, kPauliTol, run.clamped, kClampedTol));
}

void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  GridParameters gp;
  gp.v_points = 32;
  gp.homogeneous = false;
  gp.x_points = 16;
  gp.x_extent = 10.0;
  const PhaseGrid grid = build_phase_grid(gp);
  const CollisionModel model(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, 8)), 4);
  SolverConfig cfg;
  cfg.dt = 2.5e-3;
  cfg.t_end = 0.25;
  cfg.clamp = false;
  AnalyticDatum d;
  d.x_width = 1.0;
  const DensityField f0 = regularize_initial_datum(make_initial_datum(grid, d), 8);
  DiagnosticsRecorder rec(model.mean_field(), EnvelopeSpec{0.1, 0, 1}, 10);
  rec.record(f0, 0, 1, 0, 0);
  run_trajectory(cfg, f0, model,
                 [&](const DensityField& g, const StepReport& r, int s) { rec.record(g, 0, 1, r.picard.iterations, s); });
  const DriftReport dr = drift_check(rec.records(), cfg.epsilon, 2);
  report(4, dr.inertia_final_rel_dev <= kInertiaTol,
         fmt("inertia deviation %.3e at t=0.25 (tol %.0e; increment %.6e, predicted %.6e), %.0fs",
             dr.inertia_final_rel_dev, kInertiaTol, dr.inertia_increment, dr.inertia_predicted, seconds_since(t0)));
}

void criterion_7() {
  GridParameters gp;
  const PhaseGrid grid = build_phase_grid(gp);
  const CollisionModel model(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, 8)), 4);
  SolverConfig cfg;
  cfg.epsilon = 0.0;
  AnalyticDatum d;
  d.family = "fermi-dirac-equilibrium";
  const DensityField f0 = make_initial_datum(grid, d);
  DiagnosticsRecorder rec(model.mean_field(), EnvelopeSpec{0.5, 0, 1}, 1);
  rec.record(f0, 0, 1, 0, 0);
  double max_d = rec.rates().back();
  const DensityField fin = run_trajectory(cfg, f0, model, [&](const DensityField& g, const StepReport& r, int s) {
    rec.record(g, 0, 1, r.picard.iterations, s);
    max_d = std::max(max_d, rec.rates().back());
  });
  double diff = 0.0, norm = 0.0;
  for (std::size_t k = 0; k < f0.samples.size(); ++k) {
    diff += std::abs(fin.samples[k] - f0.samples[k]);
    norm += std::abs(f0.samples[k]);
  }
  report(7, diff / norm <= kStationaryL1Tol && max_d <= kStationaryDTol,
         fmt("relative L1 change %.3e (tol %.0e), max D %.3e (tol %.0e)", diff / norm, kStationaryL1Tol, max_d,
             kStationaryDTol));
}

void criterion_8() {
  GridParameters gp;
  const PhaseGrid grid = build_phase_grid(gp);
  const KernelReport r = check_kernel_invariants(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, 8)));
  const bool pass = r.max_az_residual <= 1e-12 && r.psd_min_eigenvalue >= -1e-12 && r.symmetry_residual == 0.0 &&
                    std::abs(r.divergence_fd_order - 2.0) <= 0.1 && std::abs(r.sqrt_divergence_fd_order - 2.0) <= 0.1 &&
                    r.sqrt_residual <= 1e-10 && r.ellipticity_floor_margin >= 0.0 && r.samples >= 1000;
  report(8, pass,
         fmt("az %.1e, min eig %.1e, symmetry %.1e, div order %.3f, sqrt-div order %.3f, sqrt^2 %.1e, floor margin "
             "%.3e over %d samples",
             r.max_az_residual, r.psd_min_eigenvalue, r.symmetry_residual, r.divergence_fd_order,
             r.sqrt_divergence_fd_order, r.sqrt_residual, r.ellipticity_floor_margin, r.samples));
}

double rel_max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(a[i] - b[i]));
    s = std::max(s, std::abs(b[i]));
  }
  return s > 0 ? d / s : d;
}

void criterion_9() {
  const VelocityGrid vg(2, 2.0, 8);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  DensityField g{PhaseGrid(vg)};
  for (auto& s : g.samples) s = u(rng);

  const CoefficientFields fast = coefficient_fields(g, MeanField(table, 4));
  const CoefficientFields slow = coefficient_fields_direct(g, table, 4);
  const double conv = std::max({rel_max_diff(fast.a_bar, slow.a_bar), rel_max_diff(fast.b_bar, slow.b_bar),
                                rel_max_diff(fast.div_a_bar, slow.div_a_bar), rel_max_diff(fast.div_b_bar, slow.div_b_bar)});

  const CollisionModel model(table, 4);
  Eigen::VectorXd f(static_cast<Eigen::Index>(vg.size()));
  for (auto& s : f) s = u(rng);
  const Eigen::VectorXd got = assemble_frozen(g, model, 0.05).apply(0, f);
  const Eigen::VectorXd want = dense_reference(table, 4, kDefaultLogitScale, g.samples, f, 0.05);
  const double op = (got - want).cwiseAbs().maxCoeff() / want.cwiseAbs().maxCoeff();
  report(9, conv <= kOracleTol && op <= kOracleTol,
         fmt("convolution vs direct %.2e, frozen operator vs dense %.2e (tol %.0e, relative max norm)", conv, op,
             kOracleTol));
}

void criterion_10() {
  // (dt, h) halve together: M - 1 doubles on a fixed box, dt0 = 0.08
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> res;
  for (int k = 0; k < 3; ++k) {
    GridParameters gp;
    gp.v_max = 4.0;
    gp.v_points = 40 * (1 << k) + 1;
    const PhaseGrid grid = build_phase_grid(gp);
    const CollisionModel model(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, 8)), 4);
    SolverConfig cfg;
    cfg.dt = 0.08 / (1 << k);
    cfg.t_end = 0.32;
    std::vector<DensityField> traj{regularize_initial_datum(make_initial_datum(grid, AnalyticDatum{}), 8)};
    run_trajectory(cfg, traj.front(), model, [&](const DensityField& g, const StepReport&, int) { traj.push_back(g); });
    res.push_back(weak_residual(traj, model.mean_field(), cfg.epsilon, default_test_pack(2, true)).max_relative);
  }
  const double r1 = res[1] / res[0], r2 = res[2] / res[1];
  const auto ok = [](double r) { return r >= kHalvingLo && r <= kHalvingHi; };
  report(10, ok(r1) && ok(r2),
         fmt("residuals %.3e %.3e %.3e, ratios %.3f %.3f (need [%.1f, %.1f]), %.0fs", res[0], res[1], res[2], r1, r2,
             kHalvingLo, kHalvingHi, seconds_since(t0)));
}

void criterion_11() {
  const auto t0 = std::chrono::steady_clock::now();
  GridParameters gp;
  const PhaseGrid grid = build_phase_grid(gp);
  std::vector<DensityField> finals;
  std::vector<double> dist;
  for (int k = 0; k < 4; ++k) {
    const int n = 4 << k;
    const CollisionModel model(build_kernel_table(grid.velocity(), kCoulomb, KernelConfig(2, n)), 4);
    SolverConfig cfg;
    cfg.epsilon = 0.1 / (1 << k);
    cfg.kernel_index = n;
    finals.push_back(run_trajectory(cfg, regularize_initial_datum(make_initial_datum(grid, AnalyticDatum{}), n), model));
    if (k > 0) {
      double s = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) s += std::abs(finals[k].samples[i] - finals[k - 1].samples[i]);
      dist.push_back(s * grid.quadrature_weight());
    }
  }
  report(11, dist[1] < dist[0] && dist[2] < dist[1],
         fmt("successive L1 distances %.4e %.4e %.4e (must decrease), %.0fs", dist[0], dist[1], dist[2],
             seconds_since(t0)));
}

}  // namespace

int main() {
  criterion_8();
  criterion_9();
  criterion_7();
  criteria_1_2_3_5_6();
  criterion_10();
  criterion_11();
  criterion_4();
  std::printf("criterion 12: EXCLUDED  the vanishing-viscosity limit and compactness are not checked at desk scale; "
              "criteria 10 and 11 are the only consistency evidence\n");
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
