#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace lfd {

/// Raised when a configuration or argument violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical procedure fails at runtime (solver caps, I/O, checksums).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMaxDim = 3;

/// Small fixed-capacity point; only the first `dim` entries are meaningful.
using Point = std::array<double, kMaxDim>;

/// Uniform tensor lattice on [-V, V]^N with M points per axis.
///
/// Nodes are enumerated row-major: axis 0 is the slowest index and axis N-1
/// the fastest, so flat = ((i0 * M) + i1) * M + i2.
class VelocityGrid {
 public:
  VelocityGrid(int dim, double half_width, int points_per_axis);

  int dim() const { return dim_; }
  double half_width() const { return half_width_; }
  int points_per_axis() const { return m_; }
  double spacing() const { return h_; }
  std::size_t size() const { return size_; }

  // integer-centred so that node(mirror(k)) == -node(k) exactly
  double coordinate(int i) const { return 0.5 * h_ * (2 * i - (m_ - 1)); }
  std::array<int, kMaxDim> multi_index(std::size_t flat) const;
  std::size_t flat_index(const std::array<int, kMaxDim>& idx) const;
  Point node(std::size_t flat) const;
  double norm2(std::size_t flat) const;
  /// Index of the node -v.
  std::size_t mirror(std::size_t flat) const;
  /// Stride of axis `axis` in the flat enumeration.
  std::size_t stride(int axis) const;
  /// Cell volume h^N.
  double cell_volume() const;

  bool operator==(const VelocityGrid&) const = default;

 private:
  int dim_;
  double half_width_;
  int m_;
  double h_;
  std::size_t size_;
};

enum class Topology { periodic, truncated_box };

/// Spatial lattice. Periodic grids hold `points_per_axis` nodes with spacing
/// extent/points (the endpoint is identified with node 0); truncated boxes
/// include both endpoints.
class SpatialGrid {
 public:
  SpatialGrid(int dim, double extent, int points_per_axis, Topology topology);

  int dim() const { return dim_; }
  double extent() const { return extent_; }
  int points_per_axis() const { return p_; }
  double spacing() const { return dx_; }
  Topology topology() const { return topology_; }
  std::size_t size() const { return size_; }

  double coordinate(int i) const { return -0.5 * extent_ + i * dx_; }
  std::array<int, kMaxDim> multi_index(std::size_t flat) const;
  std::size_t flat_index(const std::array<int, kMaxDim>& idx) const;
  Point node(std::size_t flat) const;
  std::size_t stride(int axis) const;
  double cell_volume() const;

  bool operator==(const SpatialGrid&) const = default;

 private:
  int dim_;
  double extent_;
  int p_;
  double dx_;
  Topology topology_;
  std::size_t size_;
};

/// Phase-space grid. Without a spatial grid the problem is spatially
/// homogeneous: there is a single x node of unit volume.
///
/// Phase nodes are enumerated x-major: flat = x_index * velocity.size() + v_index.
class PhaseGrid {
 public:
  explicit PhaseGrid(VelocityGrid velocity, std::optional<SpatialGrid> spatial = std::nullopt);

  const VelocityGrid& velocity() const { return velocity_; }
  const std::optional<SpatialGrid>& spatial() const { return spatial_; }
  bool homogeneous() const { return !spatial_.has_value(); }
  int dim() const { return velocity_.dim(); }
  std::size_t spatial_size() const { return spatial_ ? spatial_->size() : 1; }
  std::size_t velocity_size() const { return velocity_.size(); }
  std::size_t size() const { return spatial_size() * velocity_size(); }
  double quadrature_weight() const { return weight_; }
  /// x coordinates of spatial node `ix`; zero in homogeneous mode.
  Point x_node(std::size_t ix) const;

  bool operator==(const PhaseGrid&) const = default;

 private:
  VelocityGrid velocity_;
  std::optional<SpatialGrid> spatial_;
  double weight_;
};

struct GridParameters {
  int dim = 2;
  double v_max = 6.0;
  int v_points = 48;
  bool homogeneous = true;
  double x_extent = 10.0;
  int x_points = 16;
  Topology topology = Topology::periodic;
};

/// Validated construction from configuration values.
PhaseGrid build_phase_grid(const GridParameters& params);

/// Weight function of (x, v, t) used by `integrate`.
using PhaseWeight = std::function<double(const Point& x, const Point& v, double t)>;

/// Quadrature sum of field * weight * cell volume over every phase node.
double integrate(const PhaseGrid& grid, std::span<const double> field,
                 const PhaseWeight& weight = nullptr, double t = 0.0);

}  // namespace lfd
