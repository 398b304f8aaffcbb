#pragma once

#include "uveq/mc.hpp"

#include <functional>

namespace uveq {

/// Two agents who agree on ds = alpha(y) dW and on the vol-of-vol beta(y), but
/// disagree on how fast y reverts to `level`.
struct HestonTypeParams {
  ClippedAffine alpha{0.2, 0.1, 0.05, 1.0};
  ClippedAffine beta{0.3, 0.0, 0.3, 0.3};
  double fast_speed = 2.0;  // agent 1
  double slow_speed = 0.5;  // agent 2
  double level = 0.0;
  double s0 = 1.0;
  double y0 = 0.0;

  void validate() const;
};

/// speed_1 (level - y) below the level, speed_2 (level - y) above it.
template <typename Scalar>
Scalar gamma_drift(Scalar y, const HestonTypeParams& p) {
  const Scalar gap = Scalar(p.level) - y;
  return y <= Scalar(p.level) ? Scalar(p.fast_speed) * gap : Scalar(p.slow_speed) * gap;
}

std::vector<AgentModel> heston_agents(const HestonTypeParams& params);

MarketSpec heston_market(const HestonTypeParams& params, PayoffSpec payoff, double horizon,
                         double supply = 1.0, double short_bound = 0.0);

/// Mean-reverting parameters shared by a two-agent market, if it has the
/// required shape (same alpha, beta and level; distinct speeds).
std::optional<HestonTypeParams> heston_params_of(const MarketSpec& market);

/// Nodes and weights integrating against the standard normal density.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_hermite(int order);

inline constexpr int kDefaultHermiteOrder = 64;

/// E[g(s + sd Z)] for smooth g by Gauss-Hermite quadrature.
double gaussian_expectation(const std::function<double(double)>& g, double s, double sd,
                            int order = kDefaultHermiteOrder);

/// E[f(s + sqrt(iv) Z)] for a standard normal Z: kinks of f are integrated in
/// closed form, the remaining affine part by quadrature.
double conditional_gaussian_price(double s, double integrated_variance, const PayoffSpec& payoff,
                                  int order = kDefaultHermiteOrder);

/// Simulates y alone under the optimal drift gamma and vol-of-vol beta from
/// t to `horizon`, and averages the conditional Gaussian price given the
/// integrated variance of s along each path.
Estimate quadrature_mc_price(double t, double s, double y, const HestonTypeParams& params,
                             const PayoffSpec& payoff, double horizon, const SimConfig& config);

/// (h1, h2): the fast-reverting agent holds everything below the level, the
/// slow one above it, and they split at the level.
std::pair<double, double> switching_strategy(double y, const MarketSpec& market);

struct MonotonicityReport {
  bool passed = true;
  double tolerance = 0.0;
  double min_derivative = 0.0;
  int layer = -1;
  StateVector x;
};

/// min over interior nodes of layers 0..M-1 of the central difference d_y v.
MonotonicityReport verify_monotonicity(const ValueSurface& surface, double tolerance);

struct SwitchingReport {
  bool passed = true;
  std::size_t checked = 0;
  /// Nodes whose maximizer set is a single agent other than the expected one.
  std::size_t wrong = 0;
  /// Nodes reporting both agents.
  std::size_t ties = 0;
  /// First offending node, if any.
  int layer = -1;
  StateVector x;
  AgentMask mask = 0;
};

/// Compares the maximizer field with {1} below the level and {2} above it on
/// interior nodes of layers 0..M-1 more than one y-cell away from the level.
SwitchingReport verify_switching(const ValueSurface& surface, const MarketSpec& market);

}  // namespace uveq
