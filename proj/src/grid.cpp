#include "uveq/grid.hpp"

#include <cmath>

namespace uveq {

Grid::Grid(std::vector<Axis> axes, int steps, double horizon)
    : axes_(std::move(axes)), steps_(steps), horizon_(horizon), node_count_(1) {
  if (axes_.empty() || static_cast<int>(axes_.size()) > kMaxDim)
    throw InvalidArgument("grid dimension must be 1 or 2");
  for (const Axis& a : axes_) {
    if (!(a.lo < a.hi) || !std::isfinite(a.lo) || !std::isfinite(a.hi))
      throw InvalidArgument("grid bounds need lo < hi");
    if (a.nodes < 3) throw InvalidArgument("grid needs at least 3 nodes per axis");
    node_count_ *= static_cast<std::size_t>(a.nodes);
  }
  if (steps_ < 1) throw InvalidArgument("grid needs at least one time step");
  if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) throw InvalidArgument("horizon must be positive");
}

std::array<int, kMaxDim> Grid::unravel(std::size_t node) const {
  std::array<int, kMaxDim> index{0, 0};
  const auto n0 = static_cast<std::size_t>(axes_[0].nodes);
  index[0] = static_cast<int>(node % n0);
  if (dim() > 1) index[1] = static_cast<int>(node / n0);
  return index;
}

std::size_t Grid::ravel(const std::array<int, kMaxDim>& index) const {
  std::size_t node = static_cast<std::size_t>(index[0]);
  if (dim() > 1) node += static_cast<std::size_t>(index[1]) * static_cast<std::size_t>(axes_[0].nodes);
  return node;
}

StateVector Grid::point(std::size_t node) const {
  const auto index = unravel(node);
  StateVector x(dim());
  for (int j = 0; j < dim(); ++j) x(j) = axes_[j].coordinate(index[j]);
  return x;
}

bool Grid::on_boundary(std::size_t node, int axis) const {
  const int i = unravel(node)[axis];
  return i == 0 || i == axes_[axis].nodes - 1;
}

bool Grid::on_boundary(std::size_t node) const {
  for (int j = 0; j < dim(); ++j)
    if (on_boundary(node, j)) return true;
  return false;
}

std::size_t Grid::nearest_node(const StateVector& x) const {
  std::array<int, kMaxDim> index{0, 0};
  for (int j = 0; j < dim(); ++j) {
    const Axis& a = axes_[j];
    const double r = std::round((x(j) - a.lo) / a.spacing());
    index[j] = static_cast<int>(std::clamp(r, 0.0, static_cast<double>(a.nodes - 1)));
  }
  return ravel(index);
}

int Grid::nearest_layer(double t) const {
  const double r = std::round(t / dt());
  return static_cast<int>(std::clamp(r, 0.0, static_cast<double>(steps_)));
}

bool Grid::contains_strictly(const StateVector& x) const {
  if (x.size() != dim()) return false;
  for (int j = 0; j < dim(); ++j)
    if (!(x(j) > axes_[j].lo && x(j) < axes_[j].hi)) return false;
  return true;
}

Grid Grid::coarsened() const {
  std::vector<Axis> axes = axes_;
  for (Axis& a : axes) a.nodes = std::max(3, (a.nodes - 1) / 2 + 1);
  return Grid(std::move(axes), std::max(1, (steps_ + 1) / 2), horizon_);
}

Grid Grid::refined() const {
  std::vector<Axis> axes = axes_;
  for (Axis& a : axes) a.nodes = 2 * (a.nodes - 1) + 1;
  return Grid(std::move(axes), 2 * steps_, horizon_);
}

bool Grid::operator==(const Grid& other) const {
  if (steps_ != other.steps_ || horizon_ != other.horizon_ || axes_.size() != other.axes_.size())
    return false;
  for (std::size_t j = 0; j < axes_.size(); ++j)
    if (axes_[j].lo != other.axes_[j].lo || axes_[j].hi != other.axes_[j].hi ||
        axes_[j].nodes != other.axes_[j].nodes)
      return false;
  return true;
}

namespace {

// Largest diffusion coefficient a_jj over a sample of the box.
double max_variance(const std::vector<AgentModel>& agents, int axis, double horizon,
                    const std::vector<std::pair<double, double>>& box) {
  const int d = static_cast<int>(box.size());
  constexpr int kSamples = 9;
  double best = 0.0;
  for (const AgentModel& agent : agents) {
    for (double t : {0.0, 0.5 * horizon, horizon}) {
      for (int i1 = 0; i1 < (d > 1 ? kSamples : 1); ++i1) {
        for (int i0 = 0; i0 < kSamples; ++i0) {
          StateVector x(d);
          const int idx[2] = {i0, i1};
          for (int j = 0; j < d; ++j)
            x(j) = box[j].first + (box[j].second - box[j].first) * idx[j] / (kSamples - 1);
          best = std::max(best, agent.coefficients.diffusion_product(t, x)(axis, axis));
        }
      }
    }
  }
  return best;
}

}  // namespace

Grid auto_grid(const std::vector<AgentModel>& agents, const StateVector& x0, double horizon,
               const std::vector<int>& nodes, int steps, double width) {
  validate_agents(agents);
  const int d = agents.front().coefficients.dim();
  if (x0.size() != d) throw InvalidArgument("initial state dimension does not match the agents");
  if (static_cast<int>(nodes.size()) != d) throw InvalidArgument("need a node count per axis");
  if (!(width > 0.0)) throw InvalidArgument("grid width multiplier must be positive");

  std::vector<const MeanRevertingVol*> reverting;
  for (const AgentModel& a : agents)
    if (const auto* p = a.coefficients.mean_reverting()) reverting.push_back(p);

  std::vector<std::pair<double, double>> box(d);
  std::vector<bool> fixed(d, false);

  if (!reverting.empty()) {
    // Axis 1 of the mean-reverting family.
    double level = 0.0;
    double speed = reverting.front()->speed;
    for (const auto* p : reverting) {
      level += p->level / static_cast<double>(reverting.size());
      speed = std::min(speed, p->speed);
    }
    double beta_max = 0.0;
    for (const auto* p : reverting) beta_max = std::max(beta_max, p->beta(level));
    double half = width * beta_max / std::sqrt(2.0 * speed);
    for (int iter = 0; iter < 8; ++iter) {
      for (const auto* p : reverting)
        beta_max = std::max({beta_max, p->beta(level - half), p->beta(level + half)});
      half = width * beta_max / std::sqrt(2.0 * speed);
    }
    const double offset = std::abs(x0(1) - level);
    if (offset >= 0.9 * half) half = 1.25 * offset + half * 0.1;
    box[1] = {level - half, level + half};
    fixed[1] = true;
  }

  for (int j = 0; j < d; ++j)
    if (!fixed[j]) box[j] = {x0(j) - 1.0, x0(j) + 1.0};
  for (int iter = 0; iter < 3; ++iter) {
    for (int j = 0; j < d; ++j) {
      if (fixed[j]) continue;
      const double sigma = std::sqrt(max_variance(agents, j, horizon, box));
      const double half = sigma > 0.0 ? width * sigma * std::sqrt(horizon) : 1.0;
      box[j] = {x0(j) - half, x0(j) + half};
    }
  }

  std::vector<Axis> axes(d);
  for (int j = 0; j < d; ++j) axes[j] = Axis{box[j].first, box[j].second, nodes[j]};
  Grid grid(std::move(axes), steps, horizon);
  if (!grid.contains_strictly(x0)) throw InvalidArgument("initial state is not inside the grid");
  return grid;
}

}  // namespace uveq
