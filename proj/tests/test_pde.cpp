#include "oracles.hpp"
#include "uveq/pde.hpp"

#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>

using namespace uveq;

namespace {

StateVector at(double x) {
  StateVector v(1);
  v(0) = x;
  return v;
}

Grid line_grid(double lo, double hi, int nodes, int steps, double horizon = 1.0) {
  return Grid({Axis{lo, hi, nodes}}, steps, horizon);
}

SolverOptions implicit() {
  SolverOptions o;
  o.scheme = Scheme::implicit_euler;
  return o;
}

bool interior_layer_node(const ValueSurface& s, int m, std::size_t n) {
  return m < s.grid().steps() && !s.grid().on_boundary(n);
}

}  // namespace

TEST(Pde, ZeroVolatilityFreezesPayoff) {
  const PayoffSpec f = PayoffSpec::butterfly(1.0, 0.1);
  const Grid grid = line_grid(0.0, 2.0, 81, 20);
  for (const SolverOptions& o : {SolverOptions{}, implicit()}) {
    const ValueSurface s = solve_equilibrium({build_constant(1, 0.0, 0.0)}, f, grid, o);
    for (int m = 0; m <= grid.steps(); ++m)
      for (std::size_t n = 0; n < grid.node_count(); ++n)
        EXPECT_EQ(s.value(m, n), f(grid.point(n)(0)));
  }
}

TEST(Pde, LinearPayoffIsPreserved) {
  const Grid grid = line_grid(-2.0, 4.0, 121, 200);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.2), build_constant(2, 0.0, 0.5)};
  for (const SolverOptions& o : {SolverOptions{}, implicit()}) {
    const ValueSurface s = solve_equilibrium(agents, PayoffSpec::identity(), grid, o);
    for (std::size_t n = 0; n < grid.node_count(); ++n)
      EXPECT_NEAR(s.value(0, n), grid.point(n)(0), 1e-12);
  }
}

TEST(Pde, ConstantPayoffIsExact) {
  const Grid grid = line_grid(-1.0, 1.0, 41, 10);
  const ValueSurface s =
      solve_equilibrium({build_constant(1, 0.1, 0.3)}, PayoffSpec::constant(2.5), grid, implicit());
  for (double v : s.values()) EXPECT_EQ(v, 2.5);
}

TEST(Pde, BachelierCallMatchesClosedForm) {
  const Grid grid = line_grid(1.0 - 1.2, 1.0 + 1.2, 401, 400);
  const ValueSurface s =
      solve_fundamental(build_constant(1, 0.0, 0.2), PayoffSpec::call(1.0), grid, implicit());
  const double expected = oracle::bachelier_call(1.0, 1.0, 0.2);
  EXPECT_NEAR(expected, 0.2 / std::sqrt(2.0 * M_PI), 1e-15);
  EXPECT_NEAR(s.value_at_origin(at(1.0)), expected, 5e-3 * expected);
}

TEST(Pde, ExplicitSchemeReportsRequiredSteps) {
  const Grid grid = line_grid(0.0, 2.0, 401, 10);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.2)};
  const int needed = required_explicit_steps(agents, grid);
  EXPECT_GT(needed, 10);
  try {
    solve_equilibrium(agents, PayoffSpec::call(1.0), grid);
    FAIL() << "expected a CFL violation";
  } catch (const CflViolation& e) {
    EXPECT_EQ(e.required_steps(), needed);
  }
  const Grid enough = line_grid(0.0, 2.0, 401, needed);
  EXPECT_NO_THROW(solve_equilibrium(agents, PayoffSpec::call(1.0), enough));
}

TEST(Pde, SingleAgentEquilibriumIsFundamental) {
  const Grid grid = line_grid(0.0, 2.0, 101, 100);
  const AgentModel a = build_constant(1, 0.0, 0.2);
  const PayoffSpec f = PayoffSpec::butterfly(1.0, 0.1);
  const ValueSurface eq = solve_equilibrium({a}, f, grid, implicit());
  const ValueSurface fund = solve_fundamental(a, f, grid, implicit());
  EXPECT_EQ(eq.values(), fund.values());
  for (int m = 0; m < grid.steps(); ++m)
    for (std::size_t n = 0; n < grid.node_count(); ++n) {
      EXPECT_EQ(eq.maximizers(m, n), agent_bit(1));
      EXPECT_LE(std::abs(eq.drift(0, m, n)), eq.residual_tolerance());
    }
}

TEST(Pde, ConvexPayoffPricesUnderHighestVolatility) {
  const Grid grid = line_grid(-0.2, 2.2, 241, 240);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3)};
  const PayoffSpec f = PayoffSpec::call(1.0);
  const ValueSurface eq = solve_equilibrium(agents, f, grid, implicit());
  const ValueSurface high = solve_fundamental(agents[1], f, grid, implicit());
  for (std::size_t i = 0; i < eq.values().size(); ++i)
    EXPECT_NEAR(eq.values()[i], high.values()[i], 1e-12);
  for (int m = 0; m < grid.steps(); ++m)
    for (std::size_t n = 0; n < grid.node_count(); ++n)
      if (interior_layer_node(eq, m, n)) EXPECT_EQ(eq.maximizers(m, n), agent_bit(2));
}

TEST(Pde, ButterflyEquilibriumExceedsEveryFundamental) {
  const Grid grid = line_grid(-0.2, 2.2, 241, 240);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3)};
  const PayoffSpec f = PayoffSpec::butterfly(1.0, 0.1);
  const StateVector x0 = at(1.0);
  const ValueSurface eq = solve_equilibrium(agents, f, grid, implicit());
  const double tol = estimate_scheme_tolerance(agents, f, grid, x0, eq, implicit());
  const double v = eq.value_at_origin(x0);
  for (const AgentModel& a : agents) {
    const double u = solve_fundamental(a, f, grid, implicit()).value_at_origin(x0);
    EXPECT_GT(v - u, 5.0 * tol);
  }
  // Both fundamentals are also available in closed form.
  EXPECT_NEAR(solve_fundamental(agents[0], f, grid, implicit()).value_at_origin(x0),
              oracle::bachelier_butterfly(1.0, 1.0, 0.1, 0.1), 2e-3);
}

TEST(Pde, IdenticalAgentsTieEverywhere) {
  const Grid grid = line_grid(0.0, 2.0, 61, 60);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.2), build_constant(2, 0.0, 0.2)};
  const ValueSurface eq = solve_equilibrium(agents, PayoffSpec::butterfly(1.0, 0.2), grid, implicit());
  for (AgentMask m : eq.maximizer_field()) EXPECT_EQ(m, agent_bit(1) | agent_bit(2));
  for (int m = 0; m <= grid.steps(); ++m) EXPECT_EQ(eq.representative(m, 30), 1);
}

TEST(Pde, DriftsAreNonPositiveWithZeroMaximum) {
  const Grid grid = line_grid(-0.2, 2.2, 121, 120);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3),
                                       build_constant(3, 0.05, 0.2)};
  for (const SolverOptions& o : {implicit()}) {
    const ValueSurface eq = solve_equilibrium(agents, PayoffSpec::butterfly(1.0, 0.2), grid, o);
    const double tol = 10.0 * eq.residual_tolerance();
    for (int m = 0; m < grid.steps(); ++m)
      for (std::size_t n = 0; n < grid.node_count(); ++n) {
        double best = -1e300;
        for (int i = 0; i < 3; ++i) {
          EXPECT_LE(eq.drift(i, m, n), tol);
          best = std::max(best, eq.drift(i, m, n));
        }
        EXPECT_NEAR(best, 0.0, tol);
      }
  }
}

TEST(Pde, ExplicitDriftsAreNonPositiveWithZeroMaximum) {
  const Grid grid = line_grid(-0.2, 2.2, 61, 200);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3)};
  const ValueSurface eq = solve_equilibrium(agents, PayoffSpec::butterfly(1.0, 0.2), grid);
  const double tol = 10.0 * eq.residual_tolerance();
  for (int m = 0; m < grid.steps(); ++m)
    for (std::size_t n = 0; n < grid.node_count(); ++n) {
      const double a = eq.drift(0, m, n), b = eq.drift(1, m, n);
      EXPECT_LE(a, tol);
      EXPECT_LE(b, tol);
      EXPECT_NEAR(std::max(a, b), 0.0, tol);
    }
}

TEST(Pde, EquilibriumDominatesFundamentalsNodewise) {
  const Grid grid = line_grid(-0.5, 2.5, 121, 120);
  const std::vector<AgentModel> agents{build_constant(1, 0.1, 0.15), build_constant(2, -0.1, 0.25)};
  const PayoffSpec f = PayoffSpec::table({{0.0, 0.0}, {0.8, 0.5}, {1.2, -0.2}, {2.0, 0.3}});
  const ValueSurface eq = solve_equilibrium(agents, f, grid, implicit());
  for (const AgentModel& a : agents) {
    const ValueSurface u = solve_fundamental(a, f, grid, implicit());
    for (std::size_t i = 0; i < eq.values().size(); ++i)
      EXPECT_GE(eq.values()[i], u.values()[i] - 1e-12);
  }
}

TEST(Pde, ComparisonPrincipleForOrderedPayoffs) {
  const Grid grid = line_grid(-0.5, 2.5, 121, 120);
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.15), build_constant(2, 0.0, 0.25)};
  const ValueSurface low = solve_equilibrium(agents, PayoffSpec::call(1.1), grid, implicit());
  const ValueSurface high = solve_equilibrium(agents, PayoffSpec::call(0.9), grid, implicit());
  for (std::size_t i = 0; i < low.values().size(); ++i)
    EXPECT_LE(low.values()[i], high.values()[i] + 1e-12);
}

TEST(Pde, GridRefinementConvergesAtFirstOrderOrBetter) {
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3)};
  const PayoffSpec f = PayoffSpec::butterfly(1.0, 0.2);
  const StateVector x0 = at(1.0);
  double values[3];
  int nodes = 81, steps = 80;
  for (double& v : values) {
    v = solve_equilibrium(agents, f, line_grid(-0.6, 2.6, nodes, steps), implicit())
            .value_at_origin(x0);
    nodes = 2 * (nodes - 1) + 1;
    steps *= 2;
  }
  const double ratio = std::abs(values[0] - values[1]) / std::abs(values[1] - values[2]);
  EXPECT_GE(ratio, 1.8);
}

TEST(Pde, ResultsDoNotDependOnThreadCount) {
  const std::vector<AgentModel> agents{build_constant(1, 0.0, 0.1), build_constant(2, 0.0, 0.3)};
  const Grid grid = line_grid(-0.2, 2.2, 121, 60);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const ValueSurface a = solve_equilibrium(agents, PayoffSpec::butterfly(1.0, 0.2), grid, implicit());
  omp_set_num_threads(4);
  const ValueSurface b = solve_equilibrium(agents, PayoffSpec::butterfly(1.0, 0.2), grid, implicit());
  omp_set_num_threads(saved);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.maximizer_field(), b.maximizer_field());
}

TEST(Pde, ValueAtInterpolatesAndClamps) {
  const Grid grid = line_grid(0.0, 1.0, 11, 10);
  const ValueSurface s =
      solve_equilibrium({build_constant(1, 0.0, 0.0)}, PayoffSpec::identity(), grid);
  EXPECT_NEAR(s.value_at(0.35, at(0.37)), 0.37, 1e-15);
  EXPECT_NEAR(s.value_at(0.0, at(5.0)), 1.0, 1e-15);
  EXPECT_NEAR(s.value_at(2.0, at(-5.0)), 0.0, 1e-15);
}

TEST(Pde, TwoDimensionalSeparableProblemMatchesOneDimensional) {
  // x1 does not enter the payoff, so the 2-D solution is constant in x1.
  DiffusionMatrix sigma(2, 2);
  sigma << 0.2, 0.0, 0.0, 0.3;
  StateVector drift = StateVector::Zero(2);
  const Grid grid2({Axis{-0.2, 2.2, 61}, Axis{-1.0, 1.0, 21}}, 60, 1.0);
  const ValueSurface s2 = solve_equilibrium({build_constant(1, drift, sigma)},
                                            PayoffSpec::call(1.0), grid2, implicit());
  const ValueSurface s1 = solve_equilibrium({build_constant(1, 0.0, 0.2)}, PayoffSpec::call(1.0),
                                            line_grid(-0.2, 2.2, 61, 60), implicit());
  for (int i = 0; i < 61; ++i)
    for (int j = 0; j < 21; ++j)
      EXPECT_NEAR(s2.value(0, grid2.ravel({i, j})), s1.value(0, static_cast<std::size_t>(i)), 1e-9);
}

TEST(Pde, DimensionMismatchIsRejected) {
  DiffusionMatrix sigma = DiffusionMatrix::Identity(2, 2) * 0.2;
  const AgentModel two = build_constant(1, StateVector::Zero(2), sigma);
  EXPECT_THROW(solve_equilibrium({two}, PayoffSpec::call(1.0), line_grid(0.0, 2.0, 11, 10)),
               InvalidArgument);
}
