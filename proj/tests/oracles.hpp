#pragma once

// Independent reference formulas used only by the tests.

#include <cmath>
#include <numbers>

namespace uveq::oracle {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// E[(x + sd Z - K)^+] for standard normal Z.
inline double bachelier_call(double x, double strike, double sd) {
  if (sd == 0.0) return std::max(x - strike, 0.0);
  const double d = (x - strike) / sd;
  return (x - strike) * normal_cdf(d) + sd * normal_pdf(d);
}

inline double bachelier_butterfly(double x, double centre, double width, double sd) {
  return bachelier_call(x, centre - width, sd) - 2.0 * bachelier_call(x, centre, sd) +
         bachelier_call(x, centre + width, sd);
}

}  // namespace uveq::oracle
