#include "uveq/payoff.hpp"

#include <algorithm>
#include <cmath>

namespace uveq {

PayoffSpec::PayoffSpec(PayoffKind kind, int coordinate, HingeForm form,
                       std::vector<double> parameters)
    : kind_(kind), coordinate_(coordinate), form_(std::move(form)),
      parameters_(std::move(parameters)) {
  if (coordinate_ < 0 || coordinate_ >= kMaxDim)
    throw InvalidArgument("payoff coordinate out of range");
  if (!std::isfinite(form_.intercept) || !std::isfinite(form_.slope))
    throw InvalidArgument("payoff parameters must be finite");
  for (const auto& [kink, weight] : form_.hinges)
    if (!std::isfinite(kink) || !std::isfinite(weight))
      throw InvalidArgument("payoff parameters must be finite");
}

PayoffSpec PayoffSpec::call(double strike, int coordinate) {
  return {PayoffKind::call, coordinate, HingeForm{0.0, 0.0, {{strike, 1.0}}}, {strike}};
}

PayoffSpec PayoffSpec::put(double strike, int coordinate) {
  // (K - x)^+ = K - x + (x - K)^+
  return {PayoffKind::put, coordinate, HingeForm{strike, -1.0, {{strike, 1.0}}}, {strike}};
}

PayoffSpec PayoffSpec::butterfly(double center, double width, int coordinate) {
  if (!(width > 0.0)) throw InvalidArgument("butterfly width must be positive");
  HingeForm form{0.0, 0.0, {{center - width, 1.0}, {center, -2.0}, {center + width, 1.0}}};
  return {PayoffKind::butterfly, coordinate, std::move(form), {center, width}};
}

PayoffSpec PayoffSpec::table(std::vector<std::pair<double, double>> knots, int coordinate) {
  if (knots.size() < 2) throw InvalidArgument("payoff table needs at least two knots");
  std::sort(knots.begin(), knots.end());
  for (std::size_t j = 1; j < knots.size(); ++j)
    if (!(knots[j].first > knots[j - 1].first))
      throw InvalidArgument("payoff table knots must have distinct abscissae");

  auto slope = [&](std::size_t j) {
    return (knots[j + 1].second - knots[j].second) / (knots[j + 1].first - knots[j].first);
  };
  HingeForm form;
  form.slope = slope(0);
  form.intercept = knots[0].second - form.slope * knots[0].first;
  for (std::size_t j = 1; j + 1 < knots.size(); ++j) {
    const double change = slope(j) - slope(j - 1);
    if (change != 0.0) form.hinges.emplace_back(knots[j].first, change);
  }
  PayoffSpec spec{PayoffKind::table, coordinate, std::move(form), {}};
  spec.knots_ = std::move(knots);
  return spec;
}

PayoffSpec PayoffSpec::identity(int coordinate) {
  return {PayoffKind::identity, coordinate, HingeForm{0.0, 1.0, {}}, {}};
}

PayoffSpec PayoffSpec::constant(double level) {
  return {PayoffKind::constant, 0, HingeForm{level, 0.0, {}}, {level}};
}

GrowthBound PayoffSpec::growth() const {
  // |f(x)| <= |a| + (|b| + sum|w|) |x| + sum |w| |K|
  double linear = std::abs(form_.slope);
  double offset = std::abs(form_.intercept);
  for (const auto& [kink, weight] : form_.hinges) {
    linear += std::abs(weight);
    offset += std::abs(weight) * std::abs(kink);
  }
  if (linear == 0.0) return {offset, 0.0};
  return {std::max(linear, offset), 1.0};
}

bool PayoffSpec::is_convex() const {
  return std::all_of(form_.hinges.begin(), form_.hinges.end(),
                     [](const auto& h) { return h.second >= 0.0; });
}

const char* to_string(PayoffKind kind) {
  switch (kind) {
    case PayoffKind::call: return "call";
    case PayoffKind::put: return "put";
    case PayoffKind::butterfly: return "butterfly";
    case PayoffKind::table: return "table";
    case PayoffKind::identity: return "identity";
    case PayoffKind::constant: return "constant";
  }
  return "unknown";
}

double PayoffSpec::increment(double s, double step) const {
  double inc = form_.slope * step;
  for (const auto& [kink, weight] : form_.hinges) {
    const double before = s - kink;
    const double after = s + step - kink;
    if (before >= 0.0 && after >= 0.0)
      inc += weight * step;
    else if (before > 0.0 || after > 0.0)
      inc += weight * (std::max(after, 0.0) - std::max(before, 0.0));
  }
  return inc;
}

}  // namespace uveq
