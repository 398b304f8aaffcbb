#pragma once

#include "uveq/payoff.hpp"
#include "uveq/types.hpp"

#include <algorithm>
#include <memory>
#include <mutex>
#include <optional>
#include <variant>
#include <vector>

namespace uveq {

/// y -> clip(base + slope * y, lo, hi). Used for the volatility functions of
/// the mean-reverting family, where lo > 0 keeps them bounded away from zero.
struct ClippedAffine {
  double base = 0.0;
  double slope = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  template <typename Scalar>
  Scalar operator()(Scalar y) const {
    return std::clamp(Scalar(base) + Scalar(slope) * y, Scalar(lo), Scalar(hi));
  }
  bool nondecreasing() const { return slope >= 0.0; }
};

/// Constant drift (d) and volatility (d x d').
struct ConstantCoefficients {
  StateVector drift;
  DiffusionMatrix vol;
};

enum class OutOfDomain { clamp, reject };

/// One-dimensional local volatility sigma(t, x) tabulated on a (time, state)
/// rectangle, bilinearly interpolated, with constant drift.
struct LocalVolTable {
  std::vector<double> times;
  std::vector<double> states;
  Eigen::MatrixXd vols;  // vols(time index, state index)
  double drift = 0.0;
  OutOfDomain policy = OutOfDomain::clamp;
};

/// Two-factor model on (s, y):
///   ds = alpha(y) dW,  dy = speed (level - y) dt + beta(y) dW'
/// with independent W, W'.
struct MeanRevertingVol {
  ClippedAffine alpha;
  ClippedAffine beta;
  double speed = 0.0;
  double level = 0.0;
};

enum class Family { constant, local_vol_table, mean_reverting };

const char* to_string(Family family);

/// drift b(t,x) and diffusion product sigma sigma^T (t,x) at one point.
struct CoefficientValues {
  StateVector drift;
  DiffusionMatrix diffusion_product;
};

/// An agent's belief about the dynamics of X. Immutable once built.
class CoefficientField {
 public:
  using Parameters = std::variant<ConstantCoefficients, LocalVolTable, MeanRevertingVol>;

  explicit CoefficientField(Parameters parameters);

  Family family() const;
  int dim() const;
  int noise_dim() const;
  bool time_homogeneous() const { return family() != Family::local_vol_table; }

  StateVector drift(double t, const StateVector& x) const;
  /// sigma(t, x), a d x d' matrix.
  DiffusionMatrix diffusion(double t, const StateVector& x) const;
  DiffusionMatrix diffusion_product(double t, const StateVector& x) const;

  const Parameters& parameters() const { return parameters_; }

  /// For the mean-reverting family: axis 1 reverts to `level`.
  const MeanRevertingVol* mean_reverting() const {
    return std::get_if<MeanRevertingVol>(&parameters_);
  }

 private:
  double table_vol(double t, double x) const;

  Parameters parameters_;
  std::shared_ptr<std::once_flag> clamp_warning_;
};

struct AgentModel {
  AgentId id = 1;
  CoefficientField coefficients;
};

// Builders. Volatility parameters must be nonnegative; the mean-reverting
// family additionally needs speed > 0 and alpha, beta with lo > 0.
AgentModel build_constant(AgentId id, StateVector drift, DiffusionMatrix vol);
AgentModel build_constant(AgentId id, double drift, double vol);
AgentModel build_local_vol(AgentId id, LocalVolTable table);
AgentModel build_mean_reverting(AgentId id, const ClippedAffine& alpha, const ClippedAffine& beta,
                                double speed, double level);

CoefficientValues eval_coefficients(const AgentModel& model, double t, const StateVector& x);

/// Sample points for regularity checks: times x per-axis uniform points.
struct SampleLattice {
  std::vector<double> times;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<int> points;
};

struct RegularityReport {
  AgentId agent = 0;
  double min_eigenvalue = 0.0;
  double drift_lipschitz = 0.0;
  double vol_lipschitz = 0.0;
  double threshold = 0.0;
  bool elliptic = false;
};

inline constexpr double kDefaultEllipticity = 1e-6;

RegularityReport validate_regularity(const AgentModel& model, const SampleLattice& lattice,
                                     double threshold = kDefaultEllipticity);

/// Agents, payoff and trading constraints.
struct MarketSpec {
  std::vector<AgentModel> agents;
  PayoffSpec payoff = PayoffSpec::constant(0.0);
  double horizon = 1.0;
  StateVector x0;
  double supply = 1.0;       // s0
  double short_bound = 0.0;  // k

  int dim() const { return agents.empty() ? 0 : agents.front().coefficients.dim(); }
  int agent_count() const { return static_cast<int>(agents.size()); }
  /// Throws InvalidArgument when an invariant fails.
  void validate() const;
};

/// Checks ids are 1..n in order and dimensions agree.
void validate_agents(const std::vector<AgentModel>& agents);

}  // namespace uveq
