#include "uveq/models.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <string>

namespace uveq {

double joint_std_error(const Estimate& a, const Estimate& b) {
  return std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
}

Estimate sample_estimate(std::span<const double> samples, bool paired) {
  Estimate e;
  e.samples = static_cast<std::int64_t>(samples.size());
  if (samples.empty()) return e;
  // Pair averages (or the samples themselves), summed in index order so the
  // result does not depend on how the samples were produced.
  const std::size_t group = paired ? 2 : 1;
  const std::size_t count = (samples.size() + group - 1) / group;
  const auto unit = [&](std::size_t j) {
    const std::size_t a = j * group;
    if (group == 1 || a + 1 >= samples.size()) return samples[a];
    return 0.5 * (samples[a] + samples[a + 1]);
  };
  double sum = 0.0;
  for (std::size_t j = 0; j < count; ++j) sum += unit(j);
  e.mean = sum / static_cast<double>(count);
  if (count < 2) return e;
  double ss = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    const double d = unit(j) - e.mean;
    ss += d * d;
  }
  e.std_error = std::sqrt(ss / static_cast<double>(count - 1) / static_cast<double>(count));
  return e;
}

const char* to_string(Family family) {
  switch (family) {
    case Family::constant: return "constant";
    case Family::local_vol_table: return "local_vol_table";
    case Family::mean_reverting: return "mean_reverting";
  }
  return "unknown";
}

namespace {

bool all_finite(const auto& m) { return m.allFinite(); }

void check_table(const LocalVolTable& table) {
  if (table.times.empty() || table.states.size() < 2)
    throw InvalidArgument("local vol table needs >= 1 time and >= 2 states");
  if (table.vols.rows() != static_cast<Eigen::Index>(table.times.size()) ||
      table.vols.cols() != static_cast<Eigen::Index>(table.states.size()))
    throw InvalidArgument("local vol table shape does not match its axes");
  if (!std::is_sorted(table.times.begin(), table.times.end()) ||
      std::adjacent_find(table.times.begin(), table.times.end()) != table.times.end())
    throw InvalidArgument("local vol table times must be strictly increasing");
  if (!std::is_sorted(table.states.begin(), table.states.end()) ||
      std::adjacent_find(table.states.begin(), table.states.end()) != table.states.end())
    throw InvalidArgument("local vol table states must be strictly increasing");
  if (!all_finite(table.vols) || (table.vols.array() < 0.0).any())
    throw InvalidArgument("local vol table volatilities must be finite and nonnegative");
  if (!std::isfinite(table.drift)) throw InvalidArgument("local vol drift must be finite");
}

void check_positive_profile(const ClippedAffine& f, const char* name) {
  if (!(f.lo > 0.0)) throw InvalidArgument(std::string(name) + " must be bounded away from zero (lo > 0)");
  if (!(f.hi >= f.lo)) throw InvalidArgument(std::string(name) + " needs hi >= lo");
  if (!std::isfinite(f.base) || !std::isfinite(f.slope) || !std::isfinite(f.hi))
    throw InvalidArgument(std::string(name) + " parameters must be finite");
}

void check_mean_reverting(const MeanRevertingVol& p) {
  if (!(p.speed > 0.0)) throw InvalidArgument("mean-reversion speed must be positive");
  if (!std::isfinite(p.speed) || !std::isfinite(p.level))
    throw InvalidArgument("mean-reversion parameters must be finite");
  check_positive_profile(p.alpha, "alpha");
  check_positive_profile(p.beta, "beta");
  if (!p.alpha.nondecreasing()) throw InvalidArgument("alpha must be nondecreasing in y");
  // Sample check on a lattice around the level.
  double previous = -std::numeric_limits<double>::infinity();
  for (int j = -200; j <= 200; ++j) {
    const double y = p.level + 0.05 * j;
    const double a = p.alpha(y);
    if (!(a > 0.0) || !(p.beta(y) > 0.0) || a < previous)
      throw InvalidArgument("alpha, beta must be positive and alpha nondecreasing");
    previous = a;
  }
}

// Index i with grid[i] <= x < grid[i+1] and weight of grid[i+1]; x is clamped.
std::pair<std::size_t, double> bracket(const std::vector<double>& grid, double x) {
  if (grid.size() == 1 || x <= grid.front()) return {0, 0.0};
  if (x >= grid.back()) return {grid.size() - 2, 1.0};
  const auto upper = std::upper_bound(grid.begin(), grid.end(), x);
  const auto i = static_cast<std::size_t>(upper - grid.begin()) - 1;
  return {i, (x - grid[i]) / (grid[i + 1] - grid[i])};
}

}  // namespace

CoefficientField::CoefficientField(Parameters parameters)
    : parameters_(std::move(parameters)), clamp_warning_(std::make_shared<std::once_flag>()) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ConstantCoefficients>) {
          if (p.drift.size() < 1 || p.drift.size() > kMaxDim)
            throw InvalidArgument("state dimension must be 1 or 2");
          if (p.vol.rows() != p.drift.size() || p.vol.cols() < 1)
            throw InvalidArgument("volatility must be a d x d' matrix");
          if (!all_finite(p.drift) || !all_finite(p.vol))
            throw InvalidArgument("constant coefficients must be finite");
        } else if constexpr (std::is_same_v<T, LocalVolTable>) {
          check_table(p);
        } else {
          check_mean_reverting(p);
        }
      },
      parameters_);
}

Family CoefficientField::family() const {
  return static_cast<Family>(parameters_.index());
}

int CoefficientField::dim() const {
  if (const auto* c = std::get_if<ConstantCoefficients>(&parameters_))
    return static_cast<int>(c->drift.size());
  return family() == Family::local_vol_table ? 1 : 2;
}

int CoefficientField::noise_dim() const {
  if (const auto* c = std::get_if<ConstantCoefficients>(&parameters_))
    return static_cast<int>(c->vol.cols());
  return family() == Family::local_vol_table ? 1 : 2;
}

double CoefficientField::table_vol(double t, double x) const {
  const auto& table = std::get<LocalVolTable>(parameters_);
  const bool outside = t < table.times.front() || t > table.times.back() ||
                       x < table.states.front() || x > table.states.back();
  if (outside) {
    if (table.policy == OutOfDomain::reject)
      throw InvalidArgument("query outside the local volatility table");
    std::call_once(*clamp_warning_, [] {
      std::clog << "warning: local volatility table queried outside its domain; clamping\n";
    });
  }
  const auto [it, wt] = bracket(table.times, t);
  const auto [ix, wx] = bracket(table.states, x);
  const auto& v = table.vols;
  const auto at = [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(std::min(a, table.times.size() - 1)),
             static_cast<Eigen::Index>(b));
  };
  const double lower = (1.0 - wx) * at(it, ix) + wx * at(it, ix + 1);
  const double upper = (1.0 - wx) * at(it + 1, ix) + wx * at(it + 1, ix + 1);
  return (1.0 - wt) * lower + wt * upper;
}

StateVector CoefficientField::drift(double, const StateVector& x) const {
  return std::visit(
      [&](const auto& p) -> StateVector {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ConstantCoefficients>) {
          return p.drift;
        } else if constexpr (std::is_same_v<T, LocalVolTable>) {
          return StateVector::Constant(1, p.drift);
        } else {
          StateVector b(2);
          b << 0.0, p.speed * (p.level - x(1));
          return b;
        }
      },
      parameters_);
}

DiffusionMatrix CoefficientField::diffusion(double t, const StateVector& x) const {
  return std::visit(
      [&](const auto& p) -> DiffusionMatrix {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ConstantCoefficients>) {
          return p.vol;
        } else if constexpr (std::is_same_v<T, LocalVolTable>) {
          return DiffusionMatrix::Constant(1, 1, table_vol(t, x(0)));
        } else {
          DiffusionMatrix s = DiffusionMatrix::Zero(2, 2);
          s(0, 0) = p.alpha(x(1));
          s(1, 1) = p.beta(x(1));
          return s;
        }
      },
      parameters_);
}

DiffusionMatrix CoefficientField::diffusion_product(double t, const StateVector& x) const {
  const DiffusionMatrix s = diffusion(t, x);
  DiffusionMatrix a = s * s.transpose();
  // Exact symmetry regardless of rounding in the product.
  if (a.rows() == 2) a(1, 0) = a(0, 1);
  return a;
}

AgentModel build_constant(AgentId id, StateVector drift, DiffusionMatrix vol) {
  return AgentModel{id, CoefficientField{ConstantCoefficients{std::move(drift), std::move(vol)}}};
}

AgentModel build_constant(AgentId id, double drift, double vol) {
  if (!(vol >= 0.0)) throw InvalidArgument("volatility must be nonnegative");
  return build_constant(id, StateVector::Constant(1, drift), DiffusionMatrix::Constant(1, 1, vol));
}

AgentModel build_local_vol(AgentId id, LocalVolTable table) {
  return AgentModel{id, CoefficientField{std::move(table)}};
}

AgentModel build_mean_reverting(AgentId id, const ClippedAffine& alpha, const ClippedAffine& beta,
                                double speed, double level) {
  return AgentModel{id, CoefficientField{MeanRevertingVol{alpha, beta, speed, level}}};
}

CoefficientValues eval_coefficients(const AgentModel& model, double t, const StateVector& x) {
  if (x.size() != model.coefficients.dim())
    throw InvalidArgument("state dimension does not match the model");
  return {model.coefficients.drift(t, x), model.coefficients.diffusion_product(t, x)};
}

RegularityReport validate_regularity(const AgentModel& model, const SampleLattice& lattice,
                                     double threshold) {
  const int d = model.coefficients.dim();
  if (static_cast<int>(lattice.lo.size()) != d || static_cast<int>(lattice.hi.size()) != d ||
      static_cast<int>(lattice.points.size()) != d)
    throw InvalidArgument("sample lattice dimension does not match the model");
  for (int j = 0; j < d; ++j)
    if (lattice.points[j] < 2) throw InvalidArgument("sample lattice needs >= 2 points per axis");
  const std::vector<double> times = lattice.times.empty() ? std::vector<double>{0.0} : lattice.times;

  RegularityReport report;
  report.agent = model.id;
  report.threshold = threshold;
  report.min_eigenvalue = std::numeric_limits<double>::infinity();

  const auto point = [&](const std::array<int, kMaxDim>& idx) {
    StateVector x(d);
    for (int j = 0; j < d; ++j) {
      const double h = (lattice.hi[j] - lattice.lo[j]) / (lattice.points[j] - 1);
      x(j) = lattice.lo[j] + h * idx[j];
    }
    return x;
  };

  const int n1 = d > 1 ? lattice.points[1] : 1;
  for (double t : times) {
    for (int i1 = 0; i1 < n1; ++i1) {
      for (int i0 = 0; i0 < lattice.points[0]; ++i0) {
        const std::array<int, kMaxDim> idx{i0, i1};
        const StateVector x = point(idx);
        const DiffusionMatrix a = model.coefficients.diffusion_product(t, x);
        const double lambda_min =
            Eigen::SelfAdjointEigenSolver<DiffusionMatrix>(a, Eigen::EigenvaluesOnly)
                .eigenvalues()
                .minCoeff();
        report.min_eigenvalue = std::min(report.min_eigenvalue, lambda_min);

        const StateVector b = model.coefficients.drift(t, x);
        const DiffusionMatrix s = model.coefficients.diffusion(t, x);
        for (int j = 0; j < d; ++j) {
          if (idx[j] + 1 >= lattice.points[j]) continue;
          auto next = idx;
          ++next[j];
          const StateVector y = point(next);
          const double h = (y - x).norm();
          report.drift_lipschitz =
              std::max(report.drift_lipschitz, (model.coefficients.drift(t, y) - b).norm() / h);
          report.vol_lipschitz = std::max(
              report.vol_lipschitz, (model.coefficients.diffusion(t, y) - s).norm() / h);
        }
      }
    }
  }
  report.elliptic = report.min_eigenvalue >= threshold;
  return report;
}

void validate_agents(const std::vector<AgentModel>& agents) {
  if (agents.empty()) throw InvalidArgument("at least one agent is required");
  if (static_cast<int>(agents.size()) > kMaxAgents) throw InvalidArgument("too many agents");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (agents[i].id != static_cast<AgentId>(i + 1))
      throw InvalidArgument("agent ids must be 1..n in order");
    if (agents[i].coefficients.dim() != agents.front().coefficients.dim())
      throw InvalidArgument("all agents must share the state dimension");
  }
}

void MarketSpec::validate() const {
  validate_agents(agents);
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("horizon T must be positive");
  if (x0.size() != dim()) throw InvalidArgument("initial state dimension does not match the agents");
  if (!x0.allFinite()) throw InvalidArgument("initial state must be finite");
  if (!(supply >= 0.0)) throw InvalidArgument("supply s0 must be nonnegative");
  if (!(short_bound >= 0.0)) throw InvalidArgument("short bound k must be nonnegative");
  if (!(supply + short_bound > 0.0)) throw InvalidArgument("need s0 + k > 0");
  if (payoff.kind() != PayoffKind::constant && payoff.coordinate() >= dim())
    throw InvalidArgument("payoff coordinate exceeds the state dimension");
}

}  // namespace uveq
