#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "lfd/evolution.hpp"

namespace lfd {

// Dense flux-form reference: Q(f) = -sum_i D_i^T J_i + eps Lap f, with every
// convolution done by a direct double loop over the kernel table.
inline Eigen::VectorXd dense_reference(const KernelTable& table, int order, double logit_scale, std::span<const double> g,
                                const Eigen::VectorXd& f, double eps) {
  const VelocityGrid& vg = table.grid();
  const int dim = vg.dim();
  const auto nv = static_cast<Eigen::Index>(vg.size());
  std::vector<Eigen::MatrixXd> d;
  for (int a = 0; a < dim; ++a) d.emplace_back(Eigen::MatrixXd(gradient_matrix(vg, a, order)));
  Eigen::VectorXd gv(nv), w(nv), logit(nv);
  for (Eigen::Index v = 0; v < nv; ++v) {
    gv[v] = g[v];
    w[v] = g[v] * (1 - g[v]);
    const double shift = std::max(logit_scale, 1e-300);
    logit[v] = std::log(g[v] + shift) - std::log(1 - g[v] + shift);
  }
  Eigen::MatrixXd x(nv, dim), dg(nv, dim), df(nv, dim);
  for (int a = 0; a < dim; ++a) {
    dg.col(a) = d[a] * gv;
    df.col(a) = d[a] * f;
    const Eigen::VectorXd dl = d[a] * logit;
    for (Eigen::Index v = 0; v < nv; ++v) {
      const double chi = w[v] * w[v] / (w[v] * w[v] + logit_scale * logit_scale);
      x(v, a) = chi * w[v] * dl[v] + (1 - chi) * dg(v, a);
    }
  }
  const double h = vg.cell_volume();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(nv, dim);
  for (Eigen::Index v = 0; v < nv; ++v) {
    Eigen::MatrixXd abar = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd btilde = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index s = 0; s < nv; ++s) {
      const Matrix a = table.a_at(table.difference_index(static_cast<std::size_t>(v), static_cast<std::size_t>(s)));
      abar += h * w[s] * a;
      btilde += h * a * x.row(s).transpose();
    }
    const Eigen::VectorXd grad = df.row(v).transpose() + x.row(v).transpose() - dg.row(v).transpose();
    j.row(v) = (abar * grad - btilde * gv[v] * (1 - f[v])).transpose();
  }
  Eigen::VectorXd q = eps * (Eigen::MatrixXd(neumann_laplacian(vg)) * f);
  for (int a = 0; a < dim; ++a) q -= d[a].transpose() * j.col(a);
  return q;
}

}  // namespace lfd
