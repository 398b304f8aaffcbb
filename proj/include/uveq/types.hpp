#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace uveq {

/// Largest state dimension the library supports.
inline constexpr int kMaxDim = 2;

/// State vectors are dynamically sized but capped at kMaxDim, so they live on
/// the stack.
template <typename Scalar = double>
using State = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

template <typename Scalar = double>
using SmallMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                                  kMaxDim, kMaxDim>;

using StateVector = State<double>;
using DiffusionMatrix = SmallMatrix<double>;

/// Agents are numbered 1..n. Sets of agents are bit masks with bit (id-1).
using AgentId = int;
using AgentMask = std::uint32_t;
inline constexpr int kMaxAgents = 32;

inline AgentMask agent_bit(AgentId id) { return AgentMask{1} << (id - 1); }

/// Invalid input to a constructor or an operation precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure of a numerical method (stability, convergence, oracle validity).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit time step exceeds the monotonicity bound.
class CflViolation : public NumericalError {
 public:
  CflViolation(const std::string& what, int required_steps)
      : NumericalError(what), required_steps_(required_steps) {}
  int required_steps() const { return required_steps_; }

 private:
  int required_steps_;
};

/// Mean and standard error of a Monte Carlo estimator.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
};

/// Combined standard error of two estimates.
double joint_std_error(const Estimate& a, const Estimate& b);

/// Sample mean and standard error. With `paired`, consecutive samples
/// (2j, 2j+1) are antithetic partners and the error is computed from pair
/// averages.
Estimate sample_estimate(std::span<const double> samples, bool paired = false);

}  // namespace uveq
