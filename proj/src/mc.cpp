#include "uveq/mc.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace uveq {

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

namespace {

// (0, 1) from 53 random bits.
double open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits) + 0.5) * 0x1p-53;
}

}  // namespace

std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint32_t step,
                                  std::uint32_t block) {
  const auto r = Philox4x32::generate(
      {static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), step, block},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  const double u1 = open_unit(r[0], r[1]);
  const double u2 = open_unit(r[2], r[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

void SimConfig::validate() const {
  if (paths < 1) throw InvalidArgument("need at least one path");
  if (steps < 1) throw InvalidArgument("need at least one time step");
}

ControlSelector ControlSelector::fixed(AgentId agent) {
  if (agent < 1 || agent > kMaxAgents) throw InvalidArgument("agent id out of range");
  ControlSelector s;
  s.agent_ = agent;
  return s;
}

ControlSelector ControlSelector::feedback(std::shared_ptr<const ValueSurface> surface) {
  if (!surface) throw InvalidArgument("feedback control needs a value surface");
  ControlSelector s;
  s.surface_ = std::move(surface);
  return s;
}

AgentId ControlSelector::select(double t, const StateVector& x) const {
  if (!surface_) return agent_;
  const Grid& grid = surface_->grid();
  return surface_->representative(grid.nearest_layer(t), grid.nearest_node(x));
}

PathBundle simulate(const std::vector<AgentModel>& agents, const ControlSelector& selector,
                    const StateVector& x0, double horizon, const SimConfig& config) {
  validate_agents(agents);
  config.validate();
  const int d = agents.front().coefficients.dim();
  if (x0.size() != d) throw InvalidArgument("initial state dimension does not match the agents");
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");

  std::array<int, kMaxAgents + 1> position{};
  position.fill(-1);
  for (std::size_t i = 0; i < agents.size(); ++i) position[agents[i].id] = static_cast<int>(i);
  if (selector.is_feedback()) {
    const ValueSurface& s = *selector.surface();
    if (s.dim() != d) throw InvalidArgument("feedback surface dimension does not match the agents");
    if (std::abs(s.grid().horizon() - horizon) > 1e-12 * horizon)
      throw InvalidArgument("feedback surface does not cover [0, T]");
    for (const AgentModel& a : s.agents())
      if (position[a.id] < 0) throw InvalidArgument("feedback surface refers to an unknown agent");
  } else if (position[selector.fixed_agent()] < 0) {
    throw InvalidArgument("selected agent is not in the market");
  }

  PathBundle bundle;
  bundle.seed = config.seed;
  bundle.measure = selector.is_feedback() ? 0 : selector.fixed_agent();
  bundle.paths = config.paths;
  bundle.steps = config.steps;
  bundle.dim = d;
  bundle.horizon = horizon;
  bundle.antithetic = config.antithetic;
  const int L = config.steps + 1;
  if (config.record_paths) bundle.states.resize(static_cast<std::size_t>(config.paths) * L * d);
  bundle.terminal.resize(static_cast<std::size_t>(config.paths) * d);

  const double dt = horizon / config.steps;
  const double root_dt = std::sqrt(dt);

#pragma omp parallel for schedule(static)
  for (int p = 0; p < config.paths; ++p) {
    const std::uint64_t stream = config.antithetic ? static_cast<std::uint64_t>(p / 2)
                                                   : static_cast<std::uint64_t>(p);
    const double sign = (config.antithetic && p % 2 == 1) ? -1.0 : 1.0;
    StateVector x = x0;
    double* row = config.record_paths
                      ? bundle.states.data() + static_cast<std::size_t>(p) * L * d
                      : nullptr;
    if (row) std::copy(x.data(), x.data() + d, row);
    for (int m = 0; m < config.steps; ++m) {
      const double t = horizon * m / config.steps;
      const AgentModel& agent = agents[position[selector.select(t, x)]];
      const StateVector b = agent.coefficients.drift(t, x);
      const DiffusionMatrix sigma = agent.coefficients.diffusion(t, x);
      const auto z = normal_pair(config.seed, stream, static_cast<std::uint32_t>(m));
      StateVector xi(sigma.cols());
      for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = sign * z[static_cast<std::size_t>(k)];
      x += b * dt + sigma * xi * root_dt;
      if (row) std::copy(x.data(), x.data() + d, row + static_cast<std::size_t>(m + 1) * d);
    }
    std::copy(x.data(), x.data() + d, bundle.terminal.data() + static_cast<std::size_t>(p) * d);
  }
  return bundle;
}

Estimate estimate_value(const PathBundle& bundle, const PayoffSpec& payoff) {
  std::vector<double> values(static_cast<std::size_t>(bundle.paths));
  for (int p = 0; p < bundle.paths; ++p)
    values[static_cast<std::size_t>(p)] = payoff.evaluate(bundle.terminal_state(p));
  return sample_estimate(values, bundle.antithetic);
}

ControlAgreement check_control_agreement(const MarketSpec& market,
                                         std::shared_ptr<const ValueSurface> surface,
                                         double pde_price, SimConfig sim, double se_factor) {
  sim.record_paths = false;
  ControlAgreement out;
  out.pde = pde_price;
  out.feedback = estimate_value(
      simulate(market.agents, ControlSelector::feedback(std::move(surface)), market.x0,
               market.horizon, sim),
      market.payoff);
  out.gap = std::abs(out.feedback.mean - pde_price);
  out.allowed = se_factor * out.feedback.std_error;
  out.passed = out.gap <= out.allowed;
  for (const AgentModel& agent : market.agents) {
    FixedAgentValue v;
    v.agent = agent.id;
    v.estimate = estimate_value(
        simulate(market.agents, ControlSelector::fixed(agent.id), market.x0, market.horizon, sim),
        market.payoff);
    v.joint_std_error = joint_std_error(v.estimate, out.feedback);
    v.passed = v.estimate.mean <= out.feedback.mean + se_factor * v.joint_std_error;
    out.passed = out.passed && v.passed;
    out.fixed.push_back(v);
  }
  return out;
}

PnlDominance check_pnl_dominance(const MarketSpec& market, const ValueSurface& surface,
                                 const StrategyProfile& profile, SimConfig sim, int competitors,
                                 int pieces, double se_factor) {
  PnlDominance out;
  out.lo = 0.0 - market.short_bound;
  out.hi = market.supply + market.short_bound * (market.agent_count() - 1);
  out.competitors = competitors;
  sim.record_paths = true;
  for (const AgentModel& agent : market.agents) {
    PathBundle bundle =
        simulate(market.agents, ControlSelector::fixed(agent.id), market.x0, market.horizon, sim);
    attach_prices(bundle, surface);
    attach_holdings(bundle, profile, surface.grid());
    AgentPnl a;
    a.agent = agent.id;
    a.optimal = evaluate_pnl(bundle, agent.id, agent_holdings(bundle, agent.id));
    a.worst_margin = std::numeric_limits<double>::infinity();
    const auto rivals = random_competitors(competitors, pieces, out.lo, out.hi,
                                           sim.seed + static_cast<std::uint64_t>(agent.id));
    for (const PiecewiseStrategy& c : rivals) {
      const Estimate e = evaluate_pnl(bundle, agent.id, strategy_path(bundle, c));
      const double margin = a.optimal.mean - e.mean + se_factor * joint_std_error(a.optimal, e);
      if (margin < 0.0) ++a.violations;
      if (margin < a.worst_margin) {
        a.worst_margin = margin;
        a.closest_competitor = e;
      }
    }
    out.passed = out.passed && a.violations == 0;
    out.agents.push_back(a);
  }
  return out;
}

}  // namespace uveq
