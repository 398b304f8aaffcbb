#include "uveq/mc.hpp"

#include <cmath>
#include <sstream>

namespace uveq {

namespace {

struct Branches {
  double down, middle, up;
};

// Matches the mean b dt and raw second moment a dt + (b dt)^2 of the step.
Branches moment_matched(double drift, double variance, double dt, double dx, AgentId agent,
                        double t, double x) {
  const double m1 = drift * dt / dx;
  const double m2 = (variance * dt + drift * drift * dt * dt) / (dx * dx);
  Branches p{0.5 * (m2 - m1), 1.0 - m2, 0.5 * (m2 + m1)};
  constexpr double slack = 1e-14;
  if (p.down < -slack || p.middle < -slack || p.up < -slack) {
    std::ostringstream msg;
    msg << "trinomial branch probabilities invalid for agent " << agent << " at t=" << t
        << ", x=" << x << " (down " << p.down << ", middle " << p.middle << ", up " << p.up
        << "); adjust the state increment relative to the volatility scale";
    throw NumericalError(msg.str());
  }
  p.down = std::max(p.down, 0.0);
  p.middle = std::max(p.middle, 0.0);
  p.up = std::max(p.up, 0.0);
  return p;
}

}  // namespace

double lattice_oracle(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                      const StateVector& x0, double horizon, int steps,
                      const StateVector& increments) {
  validate_agents(agents);
  const int d = agents.front().coefficients.dim();
  if (x0.size() != d || increments.size() != d)
    throw InvalidArgument("lattice inputs do not match the state dimension");
  if (steps < 1 || steps > kMaxLatticeSteps)
    throw InvalidArgument("lattice oracle supports 1 to 12 steps");
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  for (int j = 0; j < d; ++j)
    if (!(increments(j) > 0.0)) throw InvalidArgument("lattice increments must be positive");

  const double dt = horizon / steps;
  const int width = 2 * steps + 1;
  const auto coordinate = [&](int j, int k) { return x0(j) + (k - steps) * increments(j); };
  const auto flat = [&](int k0, int k1) { return static_cast<std::size_t>(k1) * width + k0; };

  // Values on the full (2S+1)^d box; layer s only uses |k - S| <= s.
  std::vector<double> next(d == 1 ? width : width * width);
  std::vector<double> now(next.size());
  const int k1_extent = d == 1 ? 1 : width;
  for (int k1 = 0; k1 < k1_extent; ++k1)
    for (int k0 = 0; k0 < width; ++k0) {
      StateVector x(d);
      x(0) = coordinate(0, k0);
      if (d == 2) x(1) = coordinate(1, k1);
      next[flat(k0, k1)] = payoff.evaluate(x);
    }

  for (int s = steps - 1; s >= 0; --s) {
    const double t = s * dt;
    const int lo = steps - s, hi = steps + s;
    for (int k1 = (d == 1 ? 0 : lo); k1 <= (d == 1 ? 0 : hi); ++k1) {
      for (int k0 = lo; k0 <= hi; ++k0) {
        StateVector x(d);
        x(0) = coordinate(0, k0);
        if (d == 2) x(1) = coordinate(1, k1);
        double best = -std::numeric_limits<double>::infinity();
        for (const AgentModel& agent : agents) {
          const StateVector b = agent.coefficients.drift(t, x);
          const DiffusionMatrix a = agent.coefficients.diffusion_product(t, x);
          const Branches p0 =
              moment_matched(b(0), a(0, 0), dt, increments(0), agent.id, t, x(0));
          double value = 0.0;
          if (d == 1) {
            value = p0.down * next[flat(k0 - 1, 0)] + p0.middle * next[flat(k0, 0)] +
                    p0.up * next[flat(k0 + 1, 0)];
          } else {
            if (a(0, 1) != 0.0)
              throw InvalidArgument("lattice oracle needs uncorrelated coordinates");
            const Branches p1 =
                moment_matched(b(1), a(1, 1), dt, increments(1), agent.id, t, x(1));
            const double q0[3] = {p0.down, p0.middle, p0.up};
            const double q1[3] = {p1.down, p1.middle, p1.up};
            for (int i1 = 0; i1 < 3; ++i1)
              for (int i0 = 0; i0 < 3; ++i0)
                value += q0[i0] * q1[i1] * next[flat(k0 + i0 - 1, k1 + i1 - 1)];
          }
          best = std::max(best, value);
        }
        now[flat(k0, k1)] = best;
      }
    }
    std::swap(now, next);
  }
  return next[flat(steps, d == 1 ? 0 : steps)];
}

}  // namespace uveq
