#pragma once

#include "uveq/types.hpp"

#include <utility>
#include <vector>

namespace uveq {

enum class PayoffKind { call, put, butterfly, table, identity, constant };

/// f(x) = intercept + slope * x + sum_k weight_k * (x - kink_k)^+, in the
/// payoff's own coordinate.
struct HingeForm {
  double intercept = 0.0;
  double slope = 0.0;
  std::vector<std::pair<double, double>> hinges;  // (kink, weight)
};

/// Polynomial growth bound |f(x)| <= c (1 + |x|^p).
struct GrowthBound {
  double c = 0.0;
  double p = 0.0;
};

/// European payoff on one coordinate of the state.
class PayoffSpec {
 public:
  static PayoffSpec call(double strike, int coordinate = 0);
  static PayoffSpec put(double strike, int coordinate = 0);
  /// Long one call at center-width and center+width, short two at center.
  static PayoffSpec butterfly(double center, double width, int coordinate = 0);
  /// Piecewise-linear interpolation of (x, y) knots, linearly extrapolated.
  static PayoffSpec table(std::vector<std::pair<double, double>> knots, int coordinate = 0);
  static PayoffSpec identity(int coordinate = 0);
  static PayoffSpec constant(double level);

  PayoffKind kind() const { return kind_; }
  int coordinate() const { return coordinate_; }

  template <typename Scalar>
  Scalar operator()(Scalar s) const {
    Scalar value = Scalar(form_.intercept) + Scalar(form_.slope) * s;
    for (const auto& [kink, weight] : form_.hinges) {
      const Scalar excess = s - Scalar(kink);
      if (excess > Scalar(0)) value += Scalar(weight) * excess;
    }
    return value;
  }

  double evaluate(const StateVector& x) const { return (*this)(x(coordinate_)); }

  /// f(s + step) - f(s), with linear stretches contributing exactly
  /// slope * step.
  double increment(double s, double step) const;

  const HingeForm& hinge_form() const { return form_; }
  GrowthBound growth() const;
  bool is_convex() const;

  const std::vector<double>& parameters() const { return parameters_; }
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

 private:
  PayoffSpec(PayoffKind kind, int coordinate, HingeForm form, std::vector<double> parameters);

  PayoffKind kind_;
  int coordinate_;
  HingeForm form_;
  std::vector<double> parameters_;
  std::vector<std::pair<double, double>> knots_;
};

const char* to_string(PayoffKind kind);

}  // namespace uveq
