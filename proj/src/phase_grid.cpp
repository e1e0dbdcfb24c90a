#include "lfd/phase_grid.hpp"

#include <cmath>
#include <string>

namespace lfd {

namespace {

std::size_t ipow(int base, int exp) {
  std::size_t r = 1;
  for (int k = 0; k < exp; ++k) r *= static_cast<std::size_t>(base);
  return r;
}

std::array<int, kMaxDim> unflatten(std::size_t flat, int dim, int m) {
  std::array<int, kMaxDim> idx{0, 0, 0};
  for (int a = dim - 1; a >= 0; --a) {
    idx[a] = static_cast<int>(flat % static_cast<std::size_t>(m));
    flat /= static_cast<std::size_t>(m);
  }
  return idx;
}

std::size_t flatten(const std::array<int, kMaxDim>& idx, int dim, int m) {
  std::size_t flat = 0;
  for (int a = 0; a < dim; ++a) flat = flat * static_cast<std::size_t>(m) + static_cast<std::size_t>(idx[a]);
  return flat;
}

}  // namespace

VelocityGrid::VelocityGrid(int dim, double half_width, int points_per_axis)
    : dim_(dim), half_width_(half_width), m_(points_per_axis) {
  if (dim < 1 || dim > kMaxDim) throw ValidationError("velocity grid: dimension must be 1..3");
  if (!(half_width > 0.0)) throw ValidationError("velocity grid: half_width must be positive");
  if (points_per_axis < 2) throw ValidationError("velocity grid: need at least 2 points per axis");
  h_ = 2.0 * half_width_ / (m_ - 1);
  size_ = ipow(m_, dim_);
}

std::array<int, kMaxDim> VelocityGrid::multi_index(std::size_t flat) const { return unflatten(flat, dim_, m_); }

std::size_t VelocityGrid::flat_index(const std::array<int, kMaxDim>& idx) const { return flatten(idx, dim_, m_); }

Point VelocityGrid::node(std::size_t flat) const {
  const auto idx = multi_index(flat);
  Point p{0.0, 0.0, 0.0};
  for (int a = 0; a < dim_; ++a) p[a] = coordinate(idx[a]);
  return p;
}

double VelocityGrid::norm2(std::size_t flat) const {
  const Point p = node(flat);
  return p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
}

std::size_t VelocityGrid::mirror(std::size_t flat) const {
  auto idx = multi_index(flat);
  for (int a = 0; a < dim_; ++a) idx[a] = m_ - 1 - idx[a];
  return flat_index(idx);
}

std::size_t VelocityGrid::stride(int axis) const { return ipow(m_, dim_ - 1 - axis); }

double VelocityGrid::cell_volume() const { return std::pow(h_, dim_); }

SpatialGrid::SpatialGrid(int dim, double extent, int points_per_axis, Topology topology)
    : dim_(dim), extent_(extent), p_(points_per_axis), topology_(topology) {
  if (dim < 1 || dim > kMaxDim) throw ValidationError("spatial grid: dimension must be 1..3");
  if (!(extent > 0.0)) throw ValidationError("spatial grid: extent must be positive");
  if (points_per_axis < 2) throw ValidationError("spatial grid: need at least 2 points per axis");
  dx_ = topology == Topology::periodic ? extent_ / p_ : extent_ / (p_ - 1);
  size_ = ipow(p_, dim_);
}

std::array<int, kMaxDim> SpatialGrid::multi_index(std::size_t flat) const { return unflatten(flat, dim_, p_); }

std::size_t SpatialGrid::flat_index(const std::array<int, kMaxDim>& idx) const { return flatten(idx, dim_, p_); }

Point SpatialGrid::node(std::size_t flat) const {
  const auto idx = multi_index(flat);
  Point p{0.0, 0.0, 0.0};
  for (int a = 0; a < dim_; ++a) p[a] = coordinate(idx[a]);
  return p;
}

std::size_t SpatialGrid::stride(int axis) const { return ipow(p_, dim_ - 1 - axis); }

double SpatialGrid::cell_volume() const { return std::pow(dx_, dim_); }

PhaseGrid::PhaseGrid(VelocityGrid velocity, std::optional<SpatialGrid> spatial)
    : velocity_(velocity), spatial_(spatial) {
  if (spatial_ && spatial_->dim() != velocity_.dim())
    throw ValidationError("phase grid: spatial and velocity dimensions differ");
  weight_ = velocity_.cell_volume() * (spatial_ ? spatial_->cell_volume() : 1.0);
}

Point PhaseGrid::x_node(std::size_t ix) const {
  if (!spatial_) return Point{0.0, 0.0, 0.0};
  return spatial_->node(ix);
}

PhaseGrid build_phase_grid(const GridParameters& params) {
  if (params.dim != 2 && params.dim != 3)
    throw ValidationError("grid.dim: must be 2 or 3 (got " + std::to_string(params.dim) + ")");
  if (params.v_points < 4)
    throw ValidationError("grid.v_points: must be at least 4 (got " + std::to_string(params.v_points) + ")");
  if (!(params.v_max > 0.0)) throw ValidationError("grid.v_max: must be positive");
  VelocityGrid velocity(params.dim, params.v_max, params.v_points);
  if (params.homogeneous) return PhaseGrid(velocity);
  if (!(params.x_extent > 0.0)) throw ValidationError("grid.x_extent: must be positive");
  if (params.x_points < 4)
    throw ValidationError("grid.x_points: must be at least 4 (got " + std::to_string(params.x_points) + ")");
  return PhaseGrid(velocity, SpatialGrid(params.dim, params.x_extent, params.x_points, params.topology));
}

double integrate(const PhaseGrid& grid, std::span<const double> field, const PhaseWeight& weight, double t) {
  if (field.size() != grid.size())
    throw ValidationError("integrate: field has " + std::to_string(field.size()) + " samples, grid has " +
                          std::to_string(grid.size()));
  const std::size_t nv = grid.velocity_size();
  double sum = 0.0;
  for (std::size_t ix = 0; ix < grid.spatial_size(); ++ix) {
    const Point x = grid.x_node(ix);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const double value = field[ix * nv + iv];
      if (weight) {
        sum += value * weight(x, grid.velocity().node(iv), t);
      } else {
        sum += value;
      }
    }
  }
  return sum * grid.quadrature_weight();
}

}  // namespace lfd
