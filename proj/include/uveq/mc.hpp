#pragma once

#include "uveq/equilibrium.hpp"

#include <array>
#include <memory>

namespace uveq {

/// Philox4x32-10 counter-based generator.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter generate(Counter counter, Key key);
};

/// Two standard normals for (seed, stream, step, block) via Box-Muller.
std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint32_t step,
                                  std::uint32_t block = 0);

struct SimConfig {
  int paths = 10000;
  int steps = 200;
  std::uint64_t seed = 0;
  /// Paths 2j and 2j+1 use opposite normals.
  bool antithetic = false;
  /// Keep every X(t_m); otherwise only X(T) is stored.
  bool record_paths = true;

  void validate() const;
};

/// Picks the agent whose coefficients drive the next Euler step.
class ControlSelector {
 public:
  static ControlSelector fixed(AgentId agent);
  /// Smallest-id maximizer at the nearest (layer, node) of the surface.
  static ControlSelector feedback(std::shared_ptr<const ValueSurface> surface);

  bool is_feedback() const { return surface_ != nullptr; }
  AgentId fixed_agent() const { return agent_; }
  const ValueSurface* surface() const { return surface_.get(); }
  AgentId select(double t, const StateVector& x) const;

 private:
  AgentId agent_ = 0;
  std::shared_ptr<const ValueSurface> surface_;
};

/// Euler-Maruyama paths of dX = b_theta dt + sigma_theta dW with the control
/// evaluated at the left end of each step.
PathBundle simulate(const std::vector<AgentModel>& agents, const ControlSelector& selector,
                    const StateVector& x0, double horizon, const SimConfig& config);

/// Mean and standard error of f(X(T)).
Estimate estimate_value(const PathBundle& bundle, const PayoffSpec& payoff);

/// Backward dynamic programming on a recombining trinomial lattice with
/// per-node max over agents of moment-matched one-step expectations. The
/// lattice is x0 + j * increment per axis; in two dimensions the coordinates
/// must be uncorrelated under every agent.
double lattice_oracle(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                      const StateVector& x0, double horizon, int steps,
                      const StateVector& increments);

inline constexpr int kMaxLatticeSteps = 12;

struct FixedAgentValue {
  AgentId agent = 0;
  Estimate estimate;
  double joint_std_error = 0.0;
  bool passed = true;
};

struct ControlAgreement {
  double pde = 0.0;
  Estimate feedback;
  double gap = 0.0;
  double allowed = 0.0;
  std::vector<FixedAgentValue> fixed;
  bool passed = true;
};

/// Feedback-control Monte Carlo against the PDE price within se_factor
/// standard errors, and every fixed-agent value at most the feedback value
/// plus se_factor joint standard errors.
ControlAgreement check_control_agreement(const MarketSpec& market,
                                         std::shared_ptr<const ValueSurface> surface,
                                         double pde_price, SimConfig sim, double se_factor);

struct AgentPnl {
  AgentId agent = 0;
  Estimate optimal;
  Estimate closest_competitor;
  double worst_margin = 0.0;
  int violations = 0;
};

struct PnlDominance {
  double lo = 0.0;
  double hi = 0.0;
  int competitors = 0;
  std::vector<AgentPnl> agents;
  bool passed = true;
};

/// For each agent, simulates under that agent's model and compares the P&L of
/// its extracted holdings with random piecewise-constant competitors in
/// [-k, s0 + k (n - 1)]. A competitor beats the strategy when its mean exceeds
/// the optimal mean by more than se_factor joint standard errors.
PnlDominance check_pnl_dominance(const MarketSpec& market, const ValueSurface& surface,
                                 const StrategyProfile& profile, SimConfig sim, int competitors,
                                 int pieces, double se_factor);

}  // namespace uveq
