#pragma once

#include "uveq/grid.hpp"
#include "uveq/models.hpp"
#include "uveq/payoff.hpp"

#include <span>
#include <vector>

namespace uveq {

enum class Scheme { explicit_euler, implicit_euler };

const char* to_string(Scheme scheme);

struct SolverOptions {
  Scheme scheme = Scheme::explicit_euler;
  /// Relative tie tolerance for the per-node argmax, applied to max_i |G_i|.
  /// A floor at the rounding level of the stencil sums is always added.
  double tie_tolerance = 1e-9;
  int max_policy_iterations = 50;
  double policy_value_tolerance = 1e-10;
};

/// Stencil weights of the discrete Bellman generator
///   G_i[v](n) = sum_k w_{i,n,k} (v(nbr_k(n)) - v(n)),
/// i.e. b_i . grad v + 1/2 tr[a_i hess v] discretized with central differences
/// (upwind for drift where the central stencil loses monotonicity, i.e.
/// a_jj < |b_j| h_j). On a boundary face along axis j the second derivatives
/// involving j vanish and the first derivative is one-sided into the domain.
///
/// With an offset payoff f the generator acts on the excess w = v - f:
/// apply() returns G_i[w] + G_i[f], where G_i[f] is assembled from exact
/// payoff increments so that linear stretches of f contribute no rounding.
class DiscreteGenerator {
 public:
  DiscreteGenerator(const Grid& grid, const std::vector<AgentModel>& agents,
                    const PayoffSpec* offset = nullptr);

  /// Evaluates coefficients at time t. Cheap no-op for time-homogeneous agents
  /// after the first call.
  void update(double t);

  int agent_count() const { return static_cast<int>(weights_.size()); }
  int stencil_size() const { return stencil_; }
  std::span<const double> weights(int agent, std::size_t node) const {
    return {weights_[agent].data() + node * stencil_, static_cast<std::size_t>(stencil_)};
  }
  std::span<const std::size_t> neighbours(std::size_t node) const {
    return {neighbours_.data() + node * stencil_, static_cast<std::size_t>(stencil_)};
  }

  double apply(int agent, std::size_t node, std::span<const double> values) const;
  /// sum_k |w_k| (|v_k| + |v_n|): bounds the rounding error of apply().
  double rounding_scale(int agent, std::size_t node, std::span<const double> values) const;
  /// Largest total off-centre weight sum_k w_k over agents and nodes.
  double max_rate() const { return max_rate_; }

 private:
  void build(double t);
  void build_increments(const PayoffSpec& offset);

  const Grid* grid_;
  const std::vector<AgentModel>* agents_;
  int stencil_;
  bool homogeneous_;
  bool built_ = false;
  double built_time_ = 0.0;
  double max_rate_ = 0.0;
  std::vector<std::size_t> neighbours_;
  std::vector<std::vector<double>> weights_;
  int payoff_axis_ = -1;
  std::vector<double> increments_;  // f(x -+ h e_c) - f(x) per node
  std::vector<std::vector<double>> sources_;
  std::vector<std::vector<double>> source_rounding_;
};

/// Solved value function on a grid, with per-node maximizer sets and per-agent
/// drift fields mu_i = d_t v + G_i[v]. Immutable.
///
/// The solver works with the excess w = v - f over the terminal payoff, which
/// keeps tiny curvature resolvable where v is nearly linear; both w and v are
/// stored.
class ValueSurface {
 public:
  const Grid& grid() const { return grid_; }
  const std::vector<AgentModel>& agents() const { return agents_; }
  Scheme scheme() const { return scheme_; }
  int agent_count() const { return static_cast<int>(agents_.size()); }
  int dim() const { return grid_.dim(); }
  const PayoffSpec& payoff() const { return payoff_; }

  /// Layer whose values the scheme's generator acts on when stepping from
  /// layer m+1 to m: m (implicit) or m+1 (explicit). M maps to M.
  int generator_layer(int m) const;

  std::span<const double> layer(int m) const {
    return {values_.data() + static_cast<std::size_t>(m) * grid_.node_count(), grid_.node_count()};
  }
  double value(int m, std::size_t node) const { return values_[index(m, node)]; }
  std::span<const double> excess_layer(int m) const {
    return {excess_.data() + static_cast<std::size_t>(m) * grid_.node_count(), grid_.node_count()};
  }
  /// Maximizer set at (layer m, node), as agent-id bits.
  AgentMask maximizers(int m, std::size_t node) const { return maximizers_[index(m, node)]; }
  /// Smallest-id maximizer.
  AgentId representative(int m, std::size_t node) const;
  /// mu for the agent at position `agent` in agents(); defined for m < M.
  double drift(int agent, int m, std::size_t node) const {
    return drifts_[agent][index(m, node)];
  }

  StateVector gradient(int m, std::size_t node) const;
  DiffusionMatrix hessian(int m, std::size_t node) const;

  /// Multilinear interpolation in (t, x), clamped to the grid box.
  double value_at(double t, const StateVector& x) const;
  double value_at_origin(const StateVector& x0) const { return value_at(0.0, x0); }

  /// Rounding and linear-solve floor for drift diagnostics.
  double residual_tolerance() const { return residual_tolerance_; }
  double linear_residual() const { return linear_residual_; }

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& excess() const { return excess_; }
  const std::vector<AgentMask>& maximizer_field() const { return maximizers_; }
  const std::vector<std::vector<double>>& drift_fields() const { return drifts_; }

  /// Builds a surface from the excess w = v - f on every layer, computing the
  /// maximizer and drift fields for `agents`.
  static ValueSurface from_excess(Grid grid, std::vector<AgentModel> agents, Scheme scheme,
                                  PayoffSpec payoff, std::vector<double> excess,
                                  double linear_residual = 0.0,
                                  double tie_tolerance = SolverOptions{}.tie_tolerance);

  /// Reassembles a surface from stored fields (used by the binary reader).
  static ValueSurface from_fields(Grid grid, std::vector<AgentModel> agents, Scheme scheme,
                                  PayoffSpec payoff, std::vector<double> excess,
                                  std::vector<AgentMask> maximizers,
                                  std::vector<std::vector<double>> drifts,
                                  double residual_tolerance, double linear_residual);

 private:
  ValueSurface(Grid grid, std::vector<AgentModel> agents, Scheme scheme, PayoffSpec payoff,
               std::vector<double> excess);
  std::size_t index(int m, std::size_t node) const {
    return static_cast<std::size_t>(m) * grid_.node_count() + node;
  }

  Grid grid_;
  std::vector<AgentModel> agents_;
  Scheme scheme_;
  PayoffSpec payoff_;
  std::vector<double> excess_;
  std::vector<double> values_;
  std::vector<AgentMask> maximizers_;
  std::vector<std::vector<double>> drifts_;
  double residual_tolerance_ = 0.0;
  double linear_residual_ = 0.0;
};

/// Linear pricing PDE for one agent, backward from v(T) = f.
ValueSurface solve_fundamental(const AgentModel& agent, const PayoffSpec& payoff, const Grid& grid,
                               const SolverOptions& options = {});

/// d_t v + max_i G_i[v] = 0, v(T) = f.
ValueSurface solve_equilibrium(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                               const Grid& grid, const SolverOptions& options = {});

/// Maximizer sets {i : G_i >= max_j G_j - eps} per (layer, node), with
/// eps = tie max_j |G_j| + 16 u sum_k |w_k| (|v_k| + |v_n|).
std::vector<AgentMask> argmax_field(const ValueSurface& surface,
                                    const std::vector<AgentModel>& agents,
                                    double tie_tolerance = SolverOptions{}.tie_tolerance);

/// mu_i(t_m, x_n) = (v^{m+1} - v^m) / dt + G_i[v^{generator_layer(m)}], for m < M.
std::vector<double> drift_field(const ValueSurface& surface, const AgentModel& agent);

/// Smallest explicit step count satisfying the monotonicity bound.
int required_explicit_steps(const std::vector<AgentModel>& agents, const Grid& grid);

/// A posteriori discretization error estimate at x0: the largest |v_h - v_2h|
/// at t = 0 over coarse nodes within two coarse cells of x0, floored at
/// 1e-12 (1 + |v|).
double estimate_scheme_tolerance(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                                 const Grid& grid, const StateVector& x0,
                                 const ValueSurface& fine, const SolverOptions& options = {});

}  // namespace uveq
