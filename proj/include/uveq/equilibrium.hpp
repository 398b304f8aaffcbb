#pragma once

#include "uveq/pde.hpp"

#include <memory>
#include <string>
#include <vector>

namespace uveq {

/// Per-node, per-agent holdings of the derivative. Holdings depend on the node
/// only through a class index, so profiles extracted from maximizer sets stay
/// small even on 2-D surfaces.
class StrategyProfile {
 public:
  /// Hand-built profile with holdings laid out as [(m * nodes + node) * n + i].
  StrategyProfile(std::vector<AgentId> ids, double supply, double short_bound, int layers,
                  std::size_t nodes, std::vector<double> holdings);

  int agent_count() const { return static_cast<int>(ids_.size()); }
  const std::vector<AgentId>& ids() const { return ids_; }
  double supply() const { return supply_; }
  double short_bound() const { return short_bound_; }
  int layers() const { return layers_; }
  std::size_t nodes() const { return nodes_; }

  std::span<const double> holdings(int m, std::size_t node) const {
    const std::size_t c = classes_[static_cast<std::size_t>(m) * nodes_ + node];
    return {table_.data() + c * ids_.size(), ids_.size()};
  }
  double holding(int agent, int m, std::size_t node) const { return holdings(m, node)[agent]; }

  /// Distinct holding vectors, n entries each.
  const std::vector<double>& holding_table() const { return table_; }

 private:
  friend StrategyProfile extract_strategies(const ValueSurface&, const MarketSpec&);
  StrategyProfile() = default;

  std::vector<AgentId> ids_;
  double supply_ = 0.0;
  double short_bound_ = 0.0;
  int layers_ = 0;
  std::size_t nodes_ = 0;
  std::vector<std::uint32_t> classes_;
  std::vector<double> table_;
};

/// h_i = (s0 + k (n - m)) / m for the m maximizers, -k for everyone else.
std::vector<double> equilibrium_holdings(AgentMask maximizers, const std::vector<AgentId>& ids,
                                         double supply, double short_bound);

StrategyProfile extract_strategies(const ValueSurface& surface, const MarketSpec& market);

/// max over nodes of |sum_i h_i - s0|.
double check_clearing(const StrategyProfile& profile);

struct DriftOffender {
  AgentId agent = 0;
  int layer = -1;
  StateVector x;
  double value = 0.0;
};

struct SupermartingaleReport {
  bool passed = true;
  double tolerance = 0.0;
  /// max over agents and interior nodes of mu_i.
  double max_drift = 0.0;
  /// max over interior nodes of |max_i mu_i|.
  double max_deviation = 0.0;
  std::size_t positive_violations = 0;
  std::size_t deviation_violations = 0;
  DriftOffender worst_drift;
  DriftOffender worst_deviation;
};

/// Checks mu_i <= tol and |max_i mu_i| <= tol on interior nodes of layers
/// 0..M-1.
SupermartingaleReport verify_supermartingale(const ValueSurface& surface, double tolerance);

/// Simulated state paths with the price and holding processes they induce.
struct PathBundle {
  std::uint64_t seed = 0;
  /// Agent whose model generated the paths, or 0 for the feedback control.
  AgentId measure = 0;
  int paths = 0;
  int steps = 0;
  int dim = 0;
  double horizon = 0.0;
  bool antithetic = false;
  /// X(t_m) for every path and step, [(p * (steps + 1) + m) * dim + j]. Empty
  /// when paths were not recorded.
  std::vector<double> states;
  /// X(T), [p * dim + j].
  std::vector<double> terminal;
  /// Z(t_m) = v(t_m, X(t_m)), [p * (steps + 1) + m].
  std::vector<double> prices;
  /// H_i(t_m), [(p * (steps + 1) + m) * n + i].
  std::vector<AgentId> holders;
  std::vector<double> holdings;

  std::string measure_tag() const;
  double time(int m) const { return horizon * m / steps; }
  bool recorded() const { return !states.empty(); }
  StateVector state(int p, int m) const;
  StateVector terminal_state(int p) const;
};

/// Fills Z along recorded paths: interpolated from the surface for t < T and
/// the exact payoff at T.
void attach_prices(PathBundle& bundle, const ValueSurface& surface);

/// Fills H_i along recorded paths from the nearest grid node at (t_m, X(t_m)).
void attach_holdings(PathBundle& bundle, const StrategyProfile& profile, const Grid& grid);

/// Holding path of one agent, [p * (steps + 1) + m].
std::vector<double> agent_holdings(const PathBundle& bundle, AgentId agent);

/// Mean and standard error of sum_m H(t_m) (Z(t_{m+1}) - Z(t_m)) under the
/// bundle's measure, which must be `agent`'s.
Estimate evaluate_pnl(const PathBundle& bundle, AgentId agent, std::span<const double> holdings);
/// The same sum under whatever measure generated the bundle.
Estimate realized_pnl(const PathBundle& bundle, std::span<const double> holdings);

/// Deterministic holding process, constant on `pieces` equal time intervals.
struct PiecewiseStrategy {
  std::vector<double> values;
  double value_at(double t, double horizon) const;
};

std::vector<PiecewiseStrategy> random_competitors(int count, int pieces, double lo, double hi,
                                                  std::uint64_t seed);

/// The competitor's holding path on the bundle's time grid.
std::vector<double> strategy_path(const PathBundle& bundle, const PiecewiseStrategy& strategy);

struct TradeEvent {
  int path = 0;
  int step = 0;  // holdings change between step - 1 and step
  double time = 0.0;
  StateVector x;
  std::vector<double> before;
  std::vector<double> after;
};

/// Holding changes along recorded paths, in path then time order. Only steps
/// 1..M-1 count: H(T) is never held over an interval.
std::vector<TradeEvent> trade_events(const PathBundle& bundle, std::size_t limit = SIZE_MAX);
std::size_t count_trades(const PathBundle& bundle);

struct FundamentalValue {
  AgentId agent = 0;
  double value = 0.0;
  double scheme_tolerance = 0.0;
};

struct EquilibriumDiagnostics {
  double max_drift = 0.0;
  double max_deviation = 0.0;
  double drift_tolerance = 0.0;
  bool supermartingale = false;
  double clearing_residual = 0.0;
  double terminal_residual = 0.0;
  double residual_tolerance = 0.0;
  double linear_residual = 0.0;
};

struct EquilibriumReport {
  double price = 0.0;
  double scheme_tolerance = 0.0;
  std::vector<FundamentalValue> fundamentals;
  double bubble = 0.0;
  /// Combined tolerance of the equilibrium and fundamental solves.
  double bubble_tolerance = 0.0;
  EquilibriumDiagnostics diagnostics;
  std::shared_ptr<const ValueSurface> surface;
  std::shared_ptr<const StrategyProfile> strategies;
};

struct BubbleOptions {
  SolverOptions solver;
  /// Estimate scheme tolerances by re-solving on the coarsened grid.
  bool estimate_tolerance = true;
  /// Drift diagnostics pass at this multiple of the surface residual.
  double drift_tolerance_factor = 10.0;
};

/// Solves the equilibrium once and each agent's fundamental PDE, and
/// assembles the price, bubble and diagnostics at x0.
EquilibriumReport bubble_decomposition(const MarketSpec& market, const Grid& grid,
                                       const BubbleOptions& options = {});

}  // namespace uveq
