#pragma once

#include "uveq/models.hpp"

#include <array>
#include <vector>

namespace uveq {

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  int nodes = 3;
  double spacing() const { return (hi - lo) / (nodes - 1); }
  double coordinate(int i) const { return lo + spacing() * i; }
};

/// Uniform tensor grid over [0, T] x prod_j [lo_j, hi_j]. Node index runs
/// fastest along axis 0.
class Grid {
 public:
  Grid(std::vector<Axis> axes, int steps, double horizon);

  int dim() const { return static_cast<int>(axes_.size()); }
  const Axis& axis(int j) const { return axes_[j]; }
  const std::vector<Axis>& axes() const { return axes_; }
  int steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return horizon_ / steps_; }
  double time(int layer) const { return layer == steps_ ? horizon_ : dt() * layer; }

  std::size_t node_count() const { return node_count_; }
  std::size_t stride(int j) const { return j == 0 ? 1 : static_cast<std::size_t>(axes_[0].nodes); }
  std::array<int, kMaxDim> unravel(std::size_t node) const;
  std::size_t ravel(const std::array<int, kMaxDim>& index) const;
  StateVector point(std::size_t node) const;

  bool on_boundary(std::size_t node) const;
  bool on_boundary(std::size_t node, int axis) const;

  /// Nearest node (coordinates clamped into the box).
  std::size_t nearest_node(const StateVector& x) const;
  int nearest_layer(double t) const;
  bool contains_strictly(const StateVector& x) const;

  /// Same box, roughly half the nodes per axis and half the time steps.
  Grid coarsened() const;
  /// Same box, twice the intervals per axis and twice the time steps.
  Grid refined() const;

  bool operator==(const Grid& other) const;

 private:
  std::vector<Axis> axes_;
  int steps_;
  double horizon_;
  std::size_t node_count_;
};

inline constexpr double kDefaultWidth = 6.0;

/// Bounds from the width rule: mean-reverting axes use level +/- L beta_max /
/// sqrt(2 speed_min); other axes use x0 +/- L sigma_max sqrt(T), with sigma_max
/// sampled over the box. Mean-reverting boxes are centred on the level so the
/// level is a node when `nodes` is odd.
Grid auto_grid(const std::vector<AgentModel>& agents, const StateVector& x0, double horizon,
               const std::vector<int>& nodes, int steps, double width = kDefaultWidth);

}  // namespace uveq
