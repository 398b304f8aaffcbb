#include "uveq/equilibrium.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <unordered_map>

namespace uveq {

StrategyProfile::StrategyProfile(std::vector<AgentId> ids, double supply, double short_bound,
                                 int layers, std::size_t nodes, std::vector<double> holdings)
    : ids_(std::move(ids)),
      supply_(supply),
      short_bound_(short_bound),
      layers_(layers),
      nodes_(nodes),
      table_(std::move(holdings)) {
  if (ids_.empty()) throw InvalidArgument("a strategy profile needs at least one agent");
  const std::size_t cells = static_cast<std::size_t>(layers_) * nodes_;
  if (table_.size() != cells * ids_.size())
    throw InvalidArgument("holdings do not match the profile shape");
  for (double h : table_)
    if (!(h >= -short_bound_)) throw InvalidArgument("holding below the short-selling bound");
  classes_.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) classes_[c] = static_cast<std::uint32_t>(c);
}

std::vector<double> equilibrium_holdings(AgentMask maximizers, const std::vector<AgentId>& ids,
                                         double supply, double short_bound) {
  const int n = static_cast<int>(ids.size());
  int m = 0;
  for (AgentId id : ids)
    if (maximizers & agent_bit(id)) ++m;
  if (m == 0) throw InvalidArgument("empty maximizer set");
  const double share = (supply + short_bound * (n - m)) / m;
  std::vector<double> h(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    h[i] = (maximizers & agent_bit(ids[i])) ? share : 0.0 - short_bound;
  return h;
}

StrategyProfile extract_strategies(const ValueSurface& surface, const MarketSpec& market) {
  if (market.agents.size() != surface.agents().size())
    throw InvalidArgument("market and surface have different agents");
  std::vector<AgentId> ids;
  for (std::size_t i = 0; i < market.agents.size(); ++i) {
    if (market.agents[i].id != surface.agents()[i].id)
      throw InvalidArgument("market and surface have different agents");
    ids.push_back(market.agents[i].id);
  }
  if (!(market.supply + market.short_bound > 0.0))
    throw InvalidArgument("supply plus short bound must be positive");

  StrategyProfile profile;
  profile.ids_ = ids;
  profile.supply_ = market.supply;
  profile.short_bound_ = market.short_bound;
  profile.layers_ = surface.grid().steps() + 1;
  profile.nodes_ = surface.grid().node_count();

  const auto& masks = surface.maximizer_field();
  profile.classes_.resize(masks.size());
  std::unordered_map<AgentMask, std::uint32_t> index;
  for (std::size_t c = 0; c < masks.size(); ++c) {
    auto [it, inserted] = index.try_emplace(masks[c], static_cast<std::uint32_t>(index.size()));
    if (inserted) {
      const auto h = equilibrium_holdings(masks[c], ids, market.supply, market.short_bound);
      profile.table_.insert(profile.table_.end(), h.begin(), h.end());
    }
    profile.classes_[c] = it->second;
  }
  return profile;
}

double check_clearing(const StrategyProfile& profile) {
  const auto& table = profile.holding_table();
  const std::size_t n = static_cast<std::size_t>(profile.agent_count());
  double worst = 0.0;
  for (std::size_t c = 0; c + n <= table.size(); c += n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += table[c + i];
    worst = std::max(worst, std::abs(sum - profile.supply()));
  }
  return worst;
}

SupermartingaleReport verify_supermartingale(const ValueSurface& surface, double tolerance) {
  const Grid& grid = surface.grid();
  SupermartingaleReport r;
  r.tolerance = tolerance;
  r.max_drift = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (int m = 0; m < grid.steps(); ++m) {
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      if (grid.on_boundary(node)) continue;
      any = true;
      double best = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < surface.agent_count(); ++i) {
        const double mu = surface.drift(i, m, node);
        best = std::max(best, mu);
        if (mu > tolerance) ++r.positive_violations;
        if (mu > r.max_drift) {
          r.max_drift = mu;
          r.worst_drift = {surface.agents()[i].id, m, grid.point(node), mu};
        }
      }
      const double deviation = std::abs(best);
      if (deviation > tolerance) ++r.deviation_violations;
      if (r.worst_deviation.layer < 0 || deviation > r.max_deviation) {
        r.max_deviation = deviation;
        r.worst_deviation = {0, m, grid.point(node), best};
      }
    }
  }
  if (!any) r.max_drift = 0.0;
  r.passed = r.positive_violations == 0 && r.deviation_violations == 0;
  return r;
}

// ---------------------------------------------------------------------------
// Paths

std::string PathBundle::measure_tag() const {
  return measure == 0 ? "feedback" : "agent:" + std::to_string(measure);
}

StateVector PathBundle::state(int p, int m) const {
  if (!recorded()) throw InvalidArgument("paths were not recorded");
  StateVector x(dim);
  const std::size_t base = (static_cast<std::size_t>(p) * (steps + 1) + m) * dim;
  for (int j = 0; j < dim; ++j) x(j) = states[base + j];
  return x;
}

StateVector PathBundle::terminal_state(int p) const {
  StateVector x(dim);
  for (int j = 0; j < dim; ++j) x(j) = terminal[static_cast<std::size_t>(p) * dim + j];
  return x;
}

void attach_prices(PathBundle& bundle, const ValueSurface& surface) {
  if (!bundle.recorded()) throw InvalidArgument("paths were not recorded");
  if (bundle.dim != surface.dim()) throw InvalidArgument("path dimension does not match the surface");
  if (std::abs(bundle.horizon - surface.grid().horizon()) > 1e-12 * bundle.horizon)
    throw InvalidArgument("path horizon does not match the surface");
  const int L = bundle.steps + 1;
  bundle.prices.assign(static_cast<std::size_t>(bundle.paths) * L, 0.0);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < bundle.paths; ++p) {
    for (int m = 0; m < bundle.steps; ++m)
      bundle.prices[static_cast<std::size_t>(p) * L + m] =
          surface.value_at(bundle.time(m), bundle.state(p, m));
    bundle.prices[static_cast<std::size_t>(p) * L + bundle.steps] =
        surface.payoff().evaluate(bundle.state(p, bundle.steps));
  }
}

void attach_holdings(PathBundle& bundle, const StrategyProfile& profile, const Grid& grid) {
  if (!bundle.recorded()) throw InvalidArgument("paths were not recorded");
  if (profile.nodes() != grid.node_count() || profile.layers() != grid.steps() + 1)
    throw InvalidArgument("strategy profile does not match the grid");
  const int L = bundle.steps + 1;
  const std::size_t n = static_cast<std::size_t>(profile.agent_count());
  bundle.holders = profile.ids();
  bundle.holdings.assign(static_cast<std::size_t>(bundle.paths) * L * n, 0.0);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < bundle.paths; ++p) {
    for (int m = 0; m < L; ++m) {
      const auto h = profile.holdings(grid.nearest_layer(bundle.time(m)),
                                      grid.nearest_node(bundle.state(p, m)));
      std::copy(h.begin(), h.end(),
                bundle.holdings.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(p) * L + m) * n));
    }
  }
}

std::vector<double> agent_holdings(const PathBundle& bundle, AgentId agent) {
  const auto it = std::find(bundle.holders.begin(), bundle.holders.end(), agent);
  if (it == bundle.holders.end()) throw InvalidArgument("no holdings attached for this agent");
  const std::size_t i = static_cast<std::size_t>(it - bundle.holders.begin());
  const std::size_t n = bundle.holders.size();
  std::vector<double> out(bundle.holdings.size() / n);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = bundle.holdings[c * n + i];
  return out;
}

Estimate evaluate_pnl(const PathBundle& bundle, AgentId agent, std::span<const double> holdings) {
  if (bundle.measure != agent)
    throw InvalidArgument("P&L must be evaluated under the agent's own measure (paths are " +
                          bundle.measure_tag() + ")");
  return realized_pnl(bundle, holdings);
}

Estimate realized_pnl(const PathBundle& bundle, std::span<const double> holdings) {
  const int L = bundle.steps + 1;
  const std::size_t cells = static_cast<std::size_t>(bundle.paths) * L;
  if (bundle.prices.size() != cells) throw InvalidArgument("prices are not attached");
  if (holdings.size() != cells) throw InvalidArgument("holding path does not match the bundle");
  std::vector<double> pnl(static_cast<std::size_t>(bundle.paths), 0.0);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < bundle.paths; ++p) {
    const double* z = bundle.prices.data() + static_cast<std::size_t>(p) * L;
    const double* h = holdings.data() + static_cast<std::size_t>(p) * L;
    double sum = 0.0;
    for (int m = 0; m < bundle.steps; ++m)
      if (h[m] != 0.0) sum += h[m] * (z[m + 1] - z[m]);
    pnl[static_cast<std::size_t>(p)] = sum;
  }
  return sample_estimate(pnl, bundle.antithetic);
}

double PiecewiseStrategy::value_at(double t, double horizon) const {
  const int pieces = static_cast<int>(values.size());
  const int k = static_cast<int>(std::floor(t / horizon * pieces));
  return values[static_cast<std::size_t>(std::clamp(k, 0, pieces - 1))];
}

std::vector<PiecewiseStrategy> random_competitors(int count, int pieces, double lo, double hi,
                                                  std::uint64_t seed) {
  if (count < 0 || pieces < 1 || !(lo <= hi))
    throw InvalidArgument("invalid competitor specification");
  std::mt19937_64 rng(seed);
  std::vector<PiecewiseStrategy> out(static_cast<std::size_t>(count));
  for (auto& s : out) {
    s.values.resize(static_cast<std::size_t>(pieces));
    // Uniform on [lo, hi] from the top 53 bits.
    for (double& v : s.values) v = lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1p-53;
  }
  return out;
}

std::vector<double> strategy_path(const PathBundle& bundle, const PiecewiseStrategy& strategy) {
  const int L = bundle.steps + 1;
  std::vector<double> row(static_cast<std::size_t>(L));
  for (int m = 0; m < L; ++m) row[static_cast<std::size_t>(m)] = strategy.value_at(bundle.time(m), bundle.horizon);
  std::vector<double> out(static_cast<std::size_t>(bundle.paths) * L);
  for (int p = 0; p < bundle.paths; ++p)
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(p) * L);
  return out;
}

std::vector<TradeEvent> trade_events(const PathBundle& bundle, std::size_t limit) {
  std::vector<TradeEvent> events;
  const std::size_t n = bundle.holders.size();
  if (n == 0) return events;
  const int L = bundle.steps + 1;
  for (int p = 0; p < bundle.paths && events.size() < limit; ++p) {
    for (int m = 1; m < L - 1 && events.size() < limit; ++m) {
      const double* before = bundle.holdings.data() + (static_cast<std::size_t>(p) * L + m - 1) * n;
      const double* after = before + n;
      if (std::equal(before, before + n, after)) continue;
      events.push_back({p, m, bundle.time(m), bundle.state(p, m),
                        std::vector<double>(before, before + n), std::vector<double>(after, after + n)});
    }
  }
  return events;
}

std::size_t count_trades(const PathBundle& bundle) {
  const std::size_t n = bundle.holders.size();
  if (n == 0) return 0;
  const int L = bundle.steps + 1;
  std::size_t count = 0;
  for (int p = 0; p < bundle.paths; ++p)
    for (int m = 1; m < L - 1; ++m) {
      const double* before = bundle.holdings.data() + (static_cast<std::size_t>(p) * L + m - 1) * n;
      if (!std::equal(before, before + n, before + n)) ++count;
    }
  return count;
}

// ---------------------------------------------------------------------------
// Report

EquilibriumReport bubble_decomposition(const MarketSpec& market, const Grid& grid,
                                       const BubbleOptions& options) {
  market.validate();
  if (std::abs(grid.horizon() - market.horizon) > 1e-12 * market.horizon)
    throw InvalidArgument("grid horizon does not match the market");
  if (!grid.contains_strictly(market.x0)) throw InvalidArgument("initial state is not inside the grid");

  EquilibriumReport report;
  auto surface = std::make_shared<ValueSurface>(
      solve_equilibrium(market.agents, market.payoff, grid, options.solver));
  report.price = surface->value_at_origin(market.x0);
  report.scheme_tolerance =
      options.estimate_tolerance
          ? estimate_scheme_tolerance(market.agents, market.payoff, grid, market.x0, *surface,
                                      options.solver)
          : 0.0;

  double best = -std::numeric_limits<double>::infinity();
  double fundamental_tolerance = 0.0;
  for (const AgentModel& agent : market.agents) {
    const ValueSurface u = solve_fundamental(agent, market.payoff, grid, options.solver);
    FundamentalValue fv{agent.id, u.value_at_origin(market.x0), 0.0};
    if (options.estimate_tolerance)
      fv.scheme_tolerance =
          estimate_scheme_tolerance({agent}, market.payoff, grid, market.x0, u, options.solver);
    best = std::max(best, fv.value);
    fundamental_tolerance = std::max(fundamental_tolerance, fv.scheme_tolerance);
    report.fundamentals.push_back(fv);
  }
  report.bubble = report.price - best;
  report.bubble_tolerance = report.scheme_tolerance + fundamental_tolerance;

  auto strategies = std::make_shared<StrategyProfile>(extract_strategies(*surface, market));
  EquilibriumDiagnostics& d = report.diagnostics;
  d.residual_tolerance = surface->residual_tolerance();
  d.linear_residual = surface->linear_residual();
  d.drift_tolerance = options.drift_tolerance_factor * surface->residual_tolerance();
  const SupermartingaleReport sm = verify_supermartingale(*surface, d.drift_tolerance);
  d.max_drift = sm.max_drift;
  d.max_deviation = sm.max_deviation;
  d.supermartingale = sm.passed;
  d.clearing_residual = check_clearing(*strategies);
  for (std::size_t node = 0; node < grid.node_count(); ++node)
    d.terminal_residual = std::max(
        d.terminal_residual,
        std::abs(surface->value(grid.steps(), node) - market.payoff.evaluate(grid.point(node))));

  report.surface = std::move(surface);
  report.strategies = std::move(strategies);
  return report;
}

}  // namespace uveq
