#include <doctest.h>

#include <cmath>
#include <random>

#include "lfd/initial_data.hpp"

using namespace lfd;

namespace {

PhaseGrid velocity_grid(double vmax, int m) { return PhaseGrid(VelocityGrid(2, vmax, m)); }

PhaseGrid phase_grid(double vmax, int m, double extent, int p) {
  GridParameters gp;
  gp.dim = 2;
  gp.v_max = vmax;
  gp.v_points = m;
  gp.homogeneous = false;
  gp.x_extent = extent;
  gp.x_points = p;
  gp.topology = Topology::truncated_box;
  return build_phase_grid(gp);
}

std::size_t origin_node(const PhaseGrid& g) {
  for (std::size_t k = 0; k < g.size(); ++k)
    if (phase_radius2(g, k) == 0.0) return k;
  FAIL("grid has no node at the origin");
  return 0;
}

double weighted_l1(const DensityField& a, const DensityField& b) {
  std::vector<double> d(a.samples.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = std::abs(a.samples[k] - b.samples[k]) * (1.0 + phase_radius2(a.grid, k));
  return integrate(a.grid, d);
}

}  // namespace

TEST_CASE("regularized zero datum at the origin equals 1/(n+2)") {
  for (int n : {1, 4, 10}) {
    const PhaseGrid g = velocity_grid(3.0, 13);
    const DensityField fn = regularize_initial_datum(DensityField(g), n);
    CHECK(fn.samples[origin_node(g)] == doctest::Approx(1.0 / (n + 2)).epsilon(1e-14));
  }
  const PhaseGrid g = phase_grid(2.0, 9, 4.0, 9);
  CHECK(regularize_initial_datum(DensityField(g), 3).samples[origin_node(g)] == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("regularized full datum with n = 1 stays strictly below one") {
  const PhaseGrid g = velocity_grid(3.0, 13);
  DensityField one(g);
  std::fill(one.samples.begin(), one.samples.end(), 1.0);
  const DensityField fn = regularize_initial_datum(one, 1);
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(fn.samples[k] < 1.0);
    CHECK(fn.samples[k] <= (std::exp(-phase_radius2(g, k)) + 1.0) / 3.0 * (1 + 1e-14));
  }
}

TEST_CASE("regularization rejects data outside [0, 1]") {
  DensityField bad(velocity_grid(2.0, 8));
  bad.samples[3] = 1.5;
  CHECK_THROWS_AS(regularize_initial_datum(bad, 4), ValidationError);
  bad.samples[3] = -0.1;
  CHECK_THROWS_AS(regularize_initial_datum(bad, 4), ValidationError);
}

TEST_CASE("property: regularized data lie strictly in (0,1), above e^{-q}/(n+2), and are monotone in f0") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PhaseGrid g = phase_grid(2.5, 10, 5.0, 6);
  for (int n : {1, 2, 8, 32}) {
    DensityField lo(g), hi(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
      lo.samples[k] = u(rng) * 0.5;
      hi.samples[k] = std::min(1.0, lo.samples[k] + u(rng) * 0.5);
    }
    if (n == 32) std::fill(hi.samples.begin(), hi.samples.end(), 1.0);
    const DensityField a = regularize_initial_datum(lo, n), b = regularize_initial_datum(hi, n);
    for (std::size_t k = 0; k < g.size(); ++k) {
      CHECK(a.samples[k] > 0.0);
      CHECK(b.samples[k] < 1.0);
      CHECK(a.samples[k] >= std::exp(-phase_radius2(g, k)) / (n + 2) * (1 - 1e-14));
      CHECK(a.samples[k] <= b.samples[k]);
    }
  }
}

TEST_CASE("moment distance to a smooth compact datum decays like 1/(n+2) along n = 4, 8, 16, 32") {
  const PhaseGrid g = velocity_grid(4.0, 161);
  DensityField f0(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double r2 = phase_radius2(g, k);
    f0.samples[k] = r2 < 1.0 ? 0.8 * std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
  }
  // the e^{-q}/n floor alone keeps the distance at C/(n+2), so each doubling
  // can shrink it by at most (n+2)/(2n+2)
  double prev = INFINITY;
  int prev_n = 0;
  for (int n : {4, 8, 16, 32}) {
    const double d = weighted_l1(regularize_initial_datum(f0, n), f0);
    MESSAGE("n=" << n << " distance " << d);
    if (prev_n > 0) CHECK(d <= 1.02 * prev * (prev_n + 2.0) / (2.0 * prev_n + 2.0));
    prev = d;
    prev_n = n;
  }
}

TEST_CASE("envelope check: L itself passes the lower bound, f = 1 breaks every upper bound") {
  const PhaseGrid g = phase_grid(2.0, 8, 4.0, 6);
  const EnvelopeSpec env{0.7, 0.2, 0.5};
  DensityField f(g);
  for (std::size_t k = 0; k < g.size(); ++k) f.samples[k] = env.lower(phase_radius2(g, k));
  CHECK(envelope_check(f, env).lower_violations == 0);
  std::fill(f.samples.begin(), f.samples.end(), 1.0);
  CHECK(envelope_check(f, env).upper_violations == g.size());
  CHECK(envelope_check(f, env).worst_margin < 0.0);
  CHECK(env.upper(0.0) == doctest::Approx(0.5 / 1.5));
}

TEST_CASE("envelope fit round trip on 0.3 e^{-2q}") {
  const PhaseGrid g = phase_grid(2.0, 12, 4.0, 8);
  DensityField f(g);
  for (std::size_t k = 0; k < g.size(); ++k) f.samples[k] = 0.3 * std::exp(-2.0 * phase_radius2(g, k));
  const EnvelopeFit fit = fit_envelope(f);
  CHECK_FALSE(fit.degenerate);
  CHECK(fit.spec.alpha == doctest::Approx(2.0).epsilon(0.01));
  CHECK(fit.raw_c_lower == doctest::Approx(0.3).epsilon(0.01));
  CHECK(envelope_check(f, fit.spec).passed());
}

TEST_CASE("envelope fit: constant data are degenerate, saturated nodes are excluded") {
  DensityField f(velocity_grid(2.0, 8));
  std::fill(f.samples.begin(), f.samples.end(), 0.4);
  CHECK(fit_envelope(f).degenerate);
  for (std::size_t k = 0; k < f.samples.size(); ++k) f.samples[k] = 0.5 * std::exp(-f.grid.velocity().norm2(k));
  f.samples[0] = 0.0;
  f.samples[1] = 1.0;
  CHECK(fit_envelope(f).excluded_nodes == 2);
}

TEST_CASE("property: a fitted envelope always passes on its own input") {
  std::mt19937 rng(32);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const PhaseGrid g = phase_grid(2.0, 8, 4.0, 6);
  for (int t = 0; t < 10; ++t) {
    DensityField f(g);
    const double a = u(rng) * 2;
    for (std::size_t k = 0; k < g.size(); ++k) f.samples[k] = u(rng) * std::exp(-a * phase_radius2(g, k));
    CHECK(envelope_check(f, fit_envelope(f).spec).passed());
  }
}

TEST_CASE("analytic data families") {
  const PhaseGrid g = velocity_grid(4.0, 33);
  AnalyticDatum fd;
  fd.family = "fermi-dirac-equilibrium";
  fd.drift = {0.0, 0.0};
  const DensityField f = make_initial_datum(g, fd);
  const std::size_t o = origin_node(g);
  CHECK(f.samples[o] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-14));
  for (double x : f.samples) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
  AnalyticDatum bad;
  bad.amplitude = 1.5;
  CHECK_THROWS_AS(validate(bad, 2), ValidationError);
  bad = AnalyticDatum{};
  bad.family = "nope";
  CHECK_THROWS_AS(validate(bad, 2), ValidationError);
}
