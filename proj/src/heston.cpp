#include "uveq/heston.hpp"

#include <Eigen/Eigenvalues>

#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace uveq {

void HestonTypeParams::validate() const {
  if (!(fast_speed > slow_speed && slow_speed > 0.0))
    throw InvalidArgument("mean-reversion speeds need speed_1 > speed_2 > 0");
  if (!(alpha.lo > 0.0) || !(beta.lo > 0.0))
    throw InvalidArgument("alpha and beta must be bounded away from zero");
  if (!alpha.nondecreasing()) throw InvalidArgument("alpha must be nondecreasing");
  if (!std::isfinite(level) || !std::isfinite(s0) || !std::isfinite(y0))
    throw InvalidArgument("level and initial state must be finite");
}

std::vector<AgentModel> heston_agents(const HestonTypeParams& params) {
  params.validate();
  return {build_mean_reverting(1, params.alpha, params.beta, params.fast_speed, params.level),
          build_mean_reverting(2, params.alpha, params.beta, params.slow_speed, params.level)};
}

MarketSpec heston_market(const HestonTypeParams& params, PayoffSpec payoff, double horizon,
                         double supply, double short_bound) {
  MarketSpec market;
  market.agents = heston_agents(params);
  market.payoff = std::move(payoff);
  market.horizon = horizon;
  market.x0 = StateVector(2);
  market.x0 << params.s0, params.y0;
  market.supply = supply;
  market.short_bound = short_bound;
  market.validate();
  return market;
}

std::optional<HestonTypeParams> heston_params_of(const MarketSpec& market) {
  if (market.agents.size() != 2) return std::nullopt;
  const MeanRevertingVol* a = market.agents[0].coefficients.mean_reverting();
  const MeanRevertingVol* b = market.agents[1].coefficients.mean_reverting();
  if (!a || !b) return std::nullopt;
  const auto same = [](const ClippedAffine& f, const ClippedAffine& g) {
    return f.base == g.base && f.slope == g.slope && f.lo == g.lo && f.hi == g.hi;
  };
  if (!same(a->alpha, b->alpha) || !same(a->beta, b->beta) || a->level != b->level ||
      !(a->speed > b->speed))
    return std::nullopt;
  HestonTypeParams p;
  p.alpha = a->alpha;
  p.beta = a->beta;
  p.fast_speed = a->speed;
  p.slow_speed = b->speed;
  p.level = a->level;
  if (market.x0.size() == 2) {
    p.s0 = market.x0(0);
    p.y0 = market.x0(1);
  }
  return p;
}

QuadratureRule gauss_hermite(int order) {
  if (order < 1 || order > 512) throw InvalidArgument("quadrature order must be in [1, 512]");
  static std::mutex mutex;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(order); it != cache.end()) return it->second;

  // Golub-Welsch for the probabilists' Hermite recurrence.
  Eigen::VectorXd diagonal = Eigen::VectorXd::Zero(order);
  Eigen::VectorXd offdiagonal(std::max(order - 1, 0));
  for (int k = 1; k < order; ++k) offdiagonal(k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diagonal, offdiagonal, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw NumericalError("Gauss-Hermite eigensolver failed");

  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(order));
  rule.weights.resize(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    // Symmetrize the nodes exactly.
    const double node = 0.5 * (solver.eigenvalues()(k) - solver.eigenvalues()(order - 1 - k));
    const double v = solver.eigenvectors()(0, k);
    const double w = solver.eigenvectors()(0, order - 1 - k);
    rule.nodes[static_cast<std::size_t>(k)] = node;
    rule.weights[static_cast<std::size_t>(k)] = 0.5 * (v * v + w * w);
  }
  cache.emplace(order, rule);
  return rule;
}

double gaussian_expectation(const std::function<double(double)>& g, double s, double sd, int order) {
  if (!(sd >= 0.0)) throw InvalidArgument("standard deviation must be nonnegative");
  if (sd == 0.0) return g(s);
  const QuadratureRule rule = gauss_hermite(order);
  double sum = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) sum += rule.weights[k] * g(s + sd * rule.nodes[k]);
  return sum;
}

double conditional_gaussian_price(double s, double integrated_variance, const PayoffSpec& payoff,
                                  int order) {
  if (!(integrated_variance >= 0.0)) throw InvalidArgument("integrated variance must be nonnegative");
  if (integrated_variance == 0.0) return payoff(s);
  const double sd = std::sqrt(integrated_variance);
  const HingeForm& form = payoff.hinge_form();
  const double affine = gaussian_expectation(
      [&](double x) { return form.intercept + form.slope * x; }, s, sd, order);
  double hinges = 0.0;
  for (const auto& [kink, weight] : form.hinges) {
    const double d = (s - kink) / sd;
    const double cdf = 0.5 * std::erfc(-d / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * d * d) / std::sqrt(2.0 * std::numbers::pi);
    hinges += weight * ((s - kink) * cdf + sd * pdf);
  }
  return affine + hinges;
}

Estimate quadrature_mc_price(double t, double s, double y, const HestonTypeParams& params,
                             const PayoffSpec& payoff, double horizon, const SimConfig& config) {
  params.validate();
  config.validate();
  if (!(t >= 0.0 && t < horizon)) throw InvalidArgument("need 0 <= t < T");
  const double dt = (horizon - t) / config.steps;
  const double root_dt = std::sqrt(dt);
  std::vector<double> prices(static_cast<std::size_t>(config.paths));
#pragma omp parallel for schedule(static)
  for (int p = 0; p < config.paths; ++p) {
    const std::uint64_t stream = config.antithetic ? static_cast<std::uint64_t>(p / 2)
                                                   : static_cast<std::uint64_t>(p);
    const double sign = (config.antithetic && p % 2 == 1) ? -1.0 : 1.0;
    double yy = y;
    double variance = 0.0;
    for (int m = 0; m < config.steps; ++m) {
      const double a = params.alpha(yy);
      variance += a * a * dt;
      // The second normal of the pair drives W', matching the full simulation.
      const double z = sign * normal_pair(config.seed, stream, static_cast<std::uint32_t>(m))[1];
      yy += gamma_drift(yy, params) * dt + params.beta(yy) * root_dt * z;
    }
    prices[static_cast<std::size_t>(p)] = conditional_gaussian_price(s, variance, payoff);
  }
  return sample_estimate(prices, config.antithetic);
}

std::pair<double, double> switching_strategy(double y, const MarketSpec& market) {
  const auto params = heston_params_of(market);
  if (!params) throw InvalidArgument("switching strategy needs a two-agent mean-reverting market");
  const double s0 = market.supply, k = market.short_bound;
  double h1 = 0.0;
  if (y < params->level)
    h1 = s0 + k;
  else if (y == params->level)
    h1 = s0 / 2.0;
  else
    h1 = 0.0 - k;
  return {h1, s0 - h1};
}

MonotonicityReport verify_monotonicity(const ValueSurface& surface, double tolerance) {
  if (surface.dim() != 2) throw InvalidArgument("monotonicity check needs an (s, y) surface");
  const Grid& grid = surface.grid();
  const double h = grid.axis(1).spacing();
  const std::size_t stride = grid.stride(1);
  MonotonicityReport r;
  r.tolerance = tolerance;
  r.min_derivative = std::numeric_limits<double>::infinity();
  for (int m = 0; m < grid.steps(); ++m) {
    const auto v = surface.layer(m);
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      if (grid.on_boundary(node)) continue;
      const double dy = (v[node + stride] - v[node - stride]) / (2.0 * h);
      if (dy < r.min_derivative) {
        r.min_derivative = dy;
        r.layer = m;
        r.x = grid.point(node);
      }
    }
  }
  if (r.layer < 0) r.min_derivative = 0.0;
  r.passed = r.min_derivative >= -tolerance;
  return r;
}

SwitchingReport verify_switching(const ValueSurface& surface, const MarketSpec& market) {
  const auto params = heston_params_of(market);
  if (!params) throw InvalidArgument("switching check needs a two-agent mean-reverting market");
  if (surface.dim() != 2) throw InvalidArgument("switching check needs an (s, y) surface");
  const Grid& grid = surface.grid();
  const double band = grid.axis(1).spacing() * (1.0 + 1e-9);
  const AgentId fast = market.agents[0].id, slow = market.agents[1].id;
  SwitchingReport r;
  for (int m = 0; m < grid.steps(); ++m) {
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      if (grid.on_boundary(node)) continue;
      const StateVector x = grid.point(node);
      if (std::abs(x(1) - params->level) <= band) continue;
      ++r.checked;
      const AgentMask want = agent_bit(x(1) < params->level ? fast : slow);
      const AgentMask got = surface.maximizers(m, node);
      if (got == want) continue;
      if (std::popcount(got) > 1)
        ++r.ties;
      else
        ++r.wrong;
      if (r.layer < 0) {
        r.layer = m;
        r.x = x;
        r.mask = got;
      }
    }
  }
  r.passed = r.wrong == 0 && r.ties == 0;
  return r;
}

}  // namespace uveq
