#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lfd/mean_field.hpp"

using namespace lfd;

namespace {

const CrossSectionSpec kCoulomb = CrossSectionSpec::power_law(2, -3.0);

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

DensityField random_density(const PhaseGrid& g, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DensityField f(g);
  for (auto& x : f.samples) x = u(rng);
  return f;
}

}  // namespace

TEST_CASE("zero density gives zero coefficients") {
  const VelocityGrid vg(2, 2.0, 8);
  const MeanField engine(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const CoefficientFields c = coefficient_fields(DensityField(PhaseGrid(vg)), engine);
  CHECK(max_abs(c.a_bar) == 0.0);
  CHECK(max_abs(c.b_bar) == 0.0);
  CHECK(max_abs(c.div_a_bar) == 0.0);
  CHECK(max_abs(c.div_b_bar) == 0.0);
}

TEST_CASE("single occupied node with f = 1/2 gives a_bar = h^N a(v - v0) / 4") {
  const VelocityGrid vg(2, 2.0, 8);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  const MeanField engine(table, 4);
  DensityField f{PhaseGrid(vg)};
  const std::size_t v0 = 19;
  f.samples[v0] = 0.5;
  const CoefficientFields c = coefficient_fields(f, engine);
  const double h2 = vg.cell_volume();
  for (std::size_t v = 0; v < vg.size(); ++v) {
    const Matrix expect = 0.25 * h2 * table.a_at(table.difference_index(v, v0));
    CHECK((c.a_bar_at(0, v) - expect).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + expect.norm()));
  }
}

TEST_CASE("fast convolution agrees with direct summation on 8x8 to 1e-12") {
  const VelocityGrid vg(2, 2.0, 8);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  const MeanField engine(table, 4);
  const DensityField f = random_density(PhaseGrid(vg), 21);
  const CoefficientFields fast = coefficient_fields(f, engine);
  const CoefficientFields slow = coefficient_fields_direct(f, table, 4);
  CHECK(max_diff(fast.a_bar, slow.a_bar) <= 1e-12 * max_abs(slow.a_bar));
  CHECK(max_diff(fast.b_bar, slow.b_bar) <= 1e-12 * max_abs(slow.b_bar));
  CHECK(max_diff(fast.div_a_bar, slow.div_a_bar) <= 1e-12 * max_abs(slow.div_a_bar));
  CHECK(max_diff(fast.div_b_bar, slow.div_b_bar) <= 1e-12 * max_abs(slow.div_b_bar));
}

TEST_CASE("fast convolution agrees with direct summation in 3D and in phase space") {
  {
    const VelocityGrid vg(3, 2.0, 5);
    const auto spec = CrossSectionSpec::power_law(3, -3.0);
    const KernelTable table = build_kernel_table(vg, spec, KernelConfig(3, 4));
    const DensityField f = random_density(PhaseGrid(vg), 22);
    const CoefficientFields fast = coefficient_fields(f, MeanField(table, 2));
    const CoefficientFields slow = coefficient_fields_direct(f, table, 2);
    CHECK(max_diff(fast.a_bar, slow.a_bar) <= 1e-12 * max_abs(slow.a_bar));
    CHECK(max_diff(fast.b_bar, slow.b_bar) <= 1e-12 * max_abs(slow.b_bar));
  }
  {
    GridParameters p;
    p.dim = 2;
    p.v_max = 2.0;
    p.v_points = 6;
    p.homogeneous = false;
    p.x_points = 4;
    const PhaseGrid g = build_phase_grid(p);
    const KernelTable table = build_kernel_table(g.velocity(), kCoulomb, KernelConfig(2, 8));
    const DensityField f = random_density(g, 23);
    const CoefficientFields fast = coefficient_fields(f, MeanField(table, 4));
    const CoefficientFields slow = coefficient_fields_direct(f, table, 4);
    CHECK(fast.spatial_size == 16);
    CHECK(max_diff(fast.a_bar, slow.a_bar) <= 1e-12 * max_abs(slow.a_bar));
    CHECK(max_diff(fast.div_b_bar, slow.div_b_bar) <= 1e-12 * max_abs(slow.div_b_bar));
  }
}

TEST_CASE("radially symmetric density gives b_bar(0) = 0") {
  const VelocityGrid vg(2, 3.0, 25);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  DensityField f{PhaseGrid(vg)};
  for (std::size_t v = 0; v < vg.size(); ++v) f.samples[v] = 0.6 * std::exp(-vg.norm2(v));
  const CoefficientFields c = coefficient_fields(f, MeanField(table, 4));
  const std::size_t centre = vg.flat_index({12, 12, 0});
  CHECK(vg.norm2(centre) == 0.0);
  CHECK(c.b_bar_at(0, centre).norm() <= 1e-12 * max_abs(c.b_bar));
  CHECK(c.div_a_bar_at(0, centre).norm() <= 1e-12 * max_abs(c.div_a_bar));
}

TEST_CASE("property: a_bar is PSD and monotone in G") {
  const VelocityGrid vg(2, 2.0, 10);
  const KernelTable table = build_kernel_table(vg, kCoulomb, KernelConfig(2, 8));
  const MeanField engine(table, 4);
  const int ns = sym_size(2);
  std::mt19937 rng(24);
  std::uniform_real_distribution<double> u(0.0, 0.25);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> g1(vg.size()), g2(vg.size()), a1(ns * vg.size()), a2(ns * vg.size());
    for (std::size_t v = 0; v < vg.size(); ++v) {
      g1[v] = u(rng);
      g2[v] = g1[v] + u(rng);
    }
    engine.a_bar(g1, a1);
    engine.a_bar(g2, a2);
    for (std::size_t v = 0; v < vg.size(); ++v) {
      Matrix m1(2, 2), d(2, 2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const std::size_t k = sym_index(2, i, j) * vg.size() + v;
          m1(i, j) = a1[k];
          d(i, j) = a2[k] - a1[k];
        }
      const double scale = 1e-12 * (1.0 + m1.norm());
      CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(m1).eigenvalues().minCoeff() >= -scale);
      CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(d).eigenvalues().minCoeff() >= -scale);
    }
  }
}

TEST_CASE("property: a_bar is linear in the weight") {
  const VelocityGrid vg(2, 2.0, 8);
  const MeanField engine(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const std::size_t n = vg.size(), out = sym_size(2) * n;
  std::vector<double> g1(n), g2(n), g3(n), a1(out), a2(out), a3(out);
  std::mt19937 rng(25);
  std::uniform_real_distribution<double> u(0.0, 0.25);
  for (std::size_t v = 0; v < n; ++v) {
    g1[v] = u(rng);
    g2[v] = u(rng);
    g3[v] = 2.0 * g1[v] + 3.0 * g2[v];
  }
  engine.a_bar(g1, a1);
  engine.a_bar(g2, a2);
  engine.a_bar(g3, a3);
  for (std::size_t k = 0; k < out; ++k) CHECK(a3[k] == doctest::Approx(2.0 * a1[k] + 3.0 * a2[k]).epsilon(1e-11).scale(max_abs(a3)));
}

TEST_CASE("truncated density: quarter-filled unit ball at v = 0, mu = 1/2") {
  // The cone condition cos(angle(-v*, eta)) <= 1/2 keeps two thirds of every circle.
  const VelocityGrid vg(2, 2.0, 161);
  std::vector<double> g(vg.size(), 0.0);
  for (std::size_t v = 0; v < vg.size(); ++v)
    if (vg.norm2(v) <= 1.0) g[v] = 0.25;
  Vector eta(2);
  eta << 1.0, 0.0;
  const double expect = 0.25 * (2.0 / 3.0) * std::numbers::pi;
  for (double angle : {0.0, 0.4, 1.3}) {
    eta << std::cos(angle), std::sin(angle);
    CHECK(std::abs(truncated_density(vg, g, Point{}, eta, 0.5) - expect) <= 0.02 * expect);
  }
}

TEST_CASE("probe: zero G has zero rho and empty K_alpha") {
  const VelocityGrid vg(2, 2.0, 10);
  const MeanField engine(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  const EllipticityProbe p = ellipticity_probe(DensityField(PhaseGrid(vg)), engine, ProbeConfig{});
  CHECK(p.rho[0] == 0.0);
  CHECK(p.k_alpha_empty);
  CHECK(p.k_alpha_fraction == 0.0);
  CHECK(std::isnan(p.nu_estimate));
  CHECK_THROWS_AS(ellipticity_probe(DensityField(PhaseGrid(vg)), engine, ProbeConfig{0.05, 1.0, 1.0, 16}), ValidationError);
}

TEST_CASE("probe: rho_mu is bounded by rho, grows with mu, and the ellipticity floor holds") {
  const VelocityGrid vg(2, 3.0, 20);
  const MeanField engine(build_kernel_table(vg, kCoulomb, KernelConfig(2, 8)), 4);
  DensityField f{PhaseGrid(vg)};
  for (std::size_t v = 0; v < vg.size(); ++v) f.samples[v] = 0.7 * std::exp(-vg.norm2(v));
  std::vector<EllipticityProbe> ladder;
  for (double mu : {0.5, 0.9, 0.99}) ladder.push_back(ellipticity_probe(f, engine, ProbeConfig{0.05, mu, 1.0, 64}));
  for (const auto& p : ladder) {
    CHECK_FALSE(p.k_alpha_empty);
    CHECK(p.nu_estimate > 0.0);
    CHECK(p.floor_min_slack >= 0.0);
    for (double r : p.rho_mu) {
      CHECK(r >= 0.0);
      CHECK(r <= p.rho[0] * (1 + 1e-12));
    }
  }
  for (std::size_t s = 0; s < ladder[0].rho_mu.size(); ++s) {
    CHECK(ladder[0].rho_mu[s] <= ladder[1].rho_mu[s]);
    CHECK(ladder[1].rho_mu[s] <= ladder[2].rho_mu[s]);
  }
}
