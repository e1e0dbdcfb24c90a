#pragma once

#include <Eigen/SparseCore>
#include <span>
#include <vector>

#include "lfd/phase_grid.hpp"

namespace lfd {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Finite-difference gradient along one velocity axis.
///
/// Order 2: centered interior, one-sided three-point closure at the ends.
/// Order 4: centered five-point interior, one-sided five-point closure.
/// Both are exact on polynomials of degree <= 2, which is what makes the
/// collision flux conserve mass, momentum and energy on the lattice.
SparseMatrix gradient_matrix(const VelocityGrid& grid, int axis, int order);

/// Compact (2N+1)-point Laplacian with zero-flux (reflecting) closure.
/// Symmetric with zero row sums.
SparseMatrix neumann_laplacian(const VelocityGrid& grid);

/// Centered gradient of a velocity field, one N-vector per node, stored
/// component-major: out[axis * size + node].
std::vector<double> velocity_gradient(const VelocityGrid& grid, std::span<const double> field, int order);

/// Minimum points per axis accepted by `gradient_matrix` for the given order.
int minimum_points_for_order(int order);

}  // namespace lfd
