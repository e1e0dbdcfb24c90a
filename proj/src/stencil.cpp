#include "lfd/stencil.hpp"

#include <array>
#include <string>

namespace lfd {

namespace {

struct Row {
  std::array<int, 5> offset;
  std::array<double, 5> weight;
  int count;
};

// Stencils in units of 1/h, indexed relative to the node. Left closures are
// mirrored (with a sign flip) for the right end.
Row interior(int order) {
  if (order == 2) return {{-1, 1, 0, 0, 0}, {-0.5, 0.5, 0, 0, 0}, 2};
  return {{-2, -1, 1, 2, 0}, {1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12, 0}, 4};
}

Row left_closure(int order, int i) {
  if (order == 2) return {{0, 1, 2, 0, 0}, {-1.5, 2.0, -0.5, 0, 0}, 3};
  if (i == 0) return {{0, 1, 2, 3, 4}, {-25.0 / 12, 48.0 / 12, -36.0 / 12, 16.0 / 12, -3.0 / 12}, 5};
  return {{-1, 0, 1, 2, 3}, {-3.0 / 12, -10.0 / 12, 18.0 / 12, -6.0 / 12, 1.0 / 12}, 5};
}

Row row_for(int order, int i, int m) {
  const int reach = order / 2;
  if (i < reach) return left_closure(order, i);
  if (i >= m - reach) {
    Row r = left_closure(order, m - 1 - i);
    for (int k = 0; k < r.count; ++k) {
      r.offset[k] = -r.offset[k];
      r.weight[k] = -r.weight[k];
    }
    return r;
  }
  return interior(order);
}

}  // namespace

int minimum_points_for_order(int order) { return order == 2 ? 3 : 5; }

SparseMatrix gradient_matrix(const VelocityGrid& grid, int axis, int order) {
  if (order != 2 && order != 4) throw ValidationError("stencil order must be 2 or 4");
  if (grid.points_per_axis() < minimum_points_for_order(order))
    throw ValidationError("stencil order " + std::to_string(order) + " needs at least " +
                          std::to_string(minimum_points_for_order(order)) + " points per axis");
  const std::size_t n = grid.size();
  const auto stride = static_cast<long>(grid.stride(axis));
  const double inv_h = 1.0 / grid.spacing();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * 5);
  for (std::size_t k = 0; k < n; ++k) {
    const int i = grid.multi_index(k)[axis];
    const Row r = row_for(order, i, grid.points_per_axis());
    for (int s = 0; s < r.count; ++s) {
      const long col = static_cast<long>(k) + r.offset[s] * stride;
      triplets.emplace_back(static_cast<int>(k), static_cast<int>(col), r.weight[s] * inv_h);
    }
  }
  SparseMatrix d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  d.setFromTriplets(triplets.begin(), triplets.end());
  return d;
}

SparseMatrix neumann_laplacian(const VelocityGrid& grid) {
  const std::size_t n = grid.size();
  const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * (2 * grid.dim() + 1));
  for (std::size_t k = 0; k < n; ++k) {
    const auto idx = grid.multi_index(k);
    double diag = 0.0;
    for (int a = 0; a < grid.dim(); ++a) {
      const auto stride = static_cast<long>(grid.stride(a));
      if (idx[a] > 0) {
        triplets.emplace_back(static_cast<int>(k), static_cast<int>(static_cast<long>(k) - stride), inv_h2);
        diag -= inv_h2;
      }
      if (idx[a] < grid.points_per_axis() - 1) {
        triplets.emplace_back(static_cast<int>(k), static_cast<int>(static_cast<long>(k) + stride), inv_h2);
        diag -= inv_h2;
      }
    }
    triplets.emplace_back(static_cast<int>(k), static_cast<int>(k), diag);
  }
  SparseMatrix lap(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  lap.setFromTriplets(triplets.begin(), triplets.end());
  return lap;
}

std::vector<double> velocity_gradient(const VelocityGrid& grid, std::span<const double> field, int order) {
  const std::size_t n = grid.size();
  if (field.size() != n) throw ValidationError("velocity_gradient: field size mismatch");
  std::vector<double> out(n * grid.dim());
  Eigen::Map<const Eigen::VectorXd> f(field.data(), static_cast<Eigen::Index>(n));
  for (int a = 0; a < grid.dim(); ++a) {
    Eigen::Map<Eigen::VectorXd> g(out.data() + a * n, static_cast<Eigen::Index>(n));
    g = gradient_matrix(grid, a, order) * f;
  }
  return out;
}

}  // namespace lfd
