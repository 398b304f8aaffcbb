#include "uveq/commands.hpp"

#include "uveq/surface_io.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

namespace uveq {

using ordered_json = nlohmann::ordered_json;

// A lattice gap above this confirms a bubble the PDE reports.
constexpr double kLatticeGap = 1e-4;

namespace {

std::ostream& log_of(const CommandContext& ctx) { return ctx.log ? *ctx.log : std::cout; }

std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot write " + (dir / name).string());
  return out;
}

void write_json(const std::filesystem::path& dir, const std::string& name, const ordered_json& j) {
  std::ofstream out = open_output(dir, name);
  out << j.dump(2) << '\n';
}

ordered_json estimate_json(const Estimate& e) {
  return {{"mean", e.mean}, {"std_error", e.std_error}, {"samples", e.samples}};
}

ordered_json state_json(const StateVector& x) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index j = 0; j < x.size(); ++j) out.push_back(x(j));
  return out;
}

std::string coordinate_header(int dim) { return dim == 1 ? "x0" : "x0,x1"; }

void write_state(std::ostream& out, const StateVector& x) {
  for (Eigen::Index j = 0; j < x.size(); ++j) out << ',' << format_double(x(j));
}

// Runs the regularity check and reports failures; false blocks the command.
bool regular(const RunConfig& config, std::ostream& log, bool verbose) {
  const SampleLattice lattice = config.sample_lattice();
  bool ok = true;
  for (const AgentModel& agent : config.market.agents) {
    const RegularityReport r = validate_regularity(agent, lattice);
    if (verbose || !r.elliptic)
      log << "agent " << r.agent << ": min_eigenvalue " << format_double(r.min_eigenvalue)
          << " drift_lipschitz " << format_double(r.drift_lipschitz) << " vol_lipschitz "
          << format_double(r.vol_lipschitz) << " elliptic " << (r.elliptic ? "true" : "false")
          << '\n';
    ok = ok && r.elliptic;
  }
  if (!ok && !verbose) log << "rejected: the market is not uniformly elliptic\n";
  return ok;
}

EquilibriumReport solve_report(const RunConfig& config, const CommandContext& ctx, const Grid& grid) {
  BubbleOptions options;
  options.solver = config.solver;
  options.estimate_tolerance = !ctx.tolerance.has_value();
  EquilibriumReport report = bubble_decomposition(config.market, grid, options);
  if (ctx.tolerance) {
    report.scheme_tolerance = *ctx.tolerance;
    for (FundamentalValue& f : report.fundamentals) f.scheme_tolerance = *ctx.tolerance;
    report.bubble_tolerance = 2.0 * *ctx.tolerance;
  }
  return report;
}

ordered_json grid_json(const Grid& grid) {
  ordered_json axes = ordered_json::array();
  for (const Axis& a : grid.axes()) axes.push_back({{"lo", a.lo}, {"hi", a.hi}, {"nodes", a.nodes}});
  return {{"axes", axes}, {"steps", grid.steps()}, {"horizon", grid.horizon()}};
}

ordered_json report_json(const EquilibriumReport& report, const MarketSpec& market,
                         const Grid& grid) {
  ordered_json fundamentals = ordered_json::array();
  for (const FundamentalValue& f : report.fundamentals)
    fundamentals.push_back(
        {{"agent", f.agent}, {"value", f.value}, {"scheme_tolerance", f.scheme_tolerance}});
  const EquilibriumDiagnostics& d = report.diagnostics;
  return {
      {"price", report.price},
      {"scheme_tolerance", report.scheme_tolerance},
      {"bubble", report.bubble},
      {"bubble_tolerance", report.bubble_tolerance},
      {"fundamentals", fundamentals},
      {"x0", state_json(market.x0)},
      {"scheme", report.surface->scheme() == Scheme::implicit_euler ? "implicit" : "explicit"},
      {"grid", grid_json(grid)},
      {"diagnostics",
       {{"supermartingale", d.supermartingale},
        {"max_drift", d.max_drift},
        {"max_deviation", d.max_deviation},
        {"drift_tolerance", d.drift_tolerance},
        {"terminal_residual", d.terminal_residual},
        {"residual_tolerance", d.residual_tolerance},
        {"linear_residual", d.linear_residual}}},
      {"strategies",
       {{"supply", market.supply},
        {"short_bound", market.short_bound},
        {"clearing_residual", d.clearing_residual}}},
  };
}

void write_strategies_csv(const StrategyProfile& profile, const Grid& grid, std::ostream& out) {
  out << "t," << coordinate_header(grid.dim());
  for (AgentId id : profile.ids()) out << ",h_" << id;
  out << '\n';
  for (int m : export_layers(grid)) {
    const std::string t = format_double(grid.time(m));
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      out << t;
      write_state(out, grid.point(node));
      for (double h : profile.holdings(m, node)) out << ',' << format_double(h);
      out << '\n';
    }
  }
}

void write_surface_outputs(const ValueSurface& surface, const std::filesystem::path& dir,
                           bool binary) {
  {
    std::ofstream out = open_output(dir, "surface.csv");
    write_surface_csv(surface, out, export_layers(surface.grid()));
  }
  if (binary) save_surface(surface, (dir / "surface.bin").string());
}

void write_trades_csv(const PathBundle& bundle, const std::vector<AgentId>& ids, std::ostream& out) {
  out << "path,step,t," << coordinate_header(bundle.dim);
  for (AgentId id : ids) out << ",old_h_" << id;
  for (AgentId id : ids) out << ",new_h_" << id;
  out << '\n';
  for (const TradeEvent& e : trade_events(bundle)) {
    out << e.path << ',' << e.step << ',' << format_double(e.time);
    write_state(out, e.x);
    for (double h : e.before) out << ',' << format_double(h);
    for (double h : e.after) out << ',' << format_double(h);
    out << '\n';
  }
}

std::vector<AgentId> agent_ids(const MarketSpec& market) {
  std::vector<AgentId> ids;
  for (const AgentModel& a : market.agents) ids.push_back(a.id);
  return ids;
}

double run_lattice(const RunConfig& config, std::vector<AgentModel> agents) {
  const MarketSpec& market = config.market;
  const LatticeSection& ls = config.verify.lattice;
  StateVector increments(market.dim());
  for (int j = 0; j < market.dim(); ++j) increments(j) = ls.increments[static_cast<std::size_t>(j)];
  return lattice_oracle(agents, market.payoff, market.x0, market.horizon, ls.steps, increments);
}

}  // namespace

int cmd_validate(const RunConfig& config, const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  const bool ok = regular(config, log, true);
  log << (ok ? "valid\n" : "invalid: at least one agent is not uniformly elliptic\n");
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_price(const RunConfig& config, const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  if (!regular(config, log, false)) return kExitCheckFailed;
  const Grid grid = config.make_grid();
  const EquilibriumReport report = solve_report(config, ctx, grid);

  write_json(ctx.out, "report.json", report_json(report, config.market, grid));
  write_surface_outputs(*report.surface, ctx.out, true);
  {
    std::ofstream out = open_output(ctx.out, "strategies.csv");
    write_strategies_csv(*report.strategies, grid, out);
  }

  log << "price " << format_double(report.price) << " (scheme tolerance "
      << format_double(report.scheme_tolerance) << ")\n";
  for (const FundamentalValue& f : report.fundamentals)
    log << "fundamental agent " << f.agent << ' ' << format_double(f.value) << '\n';
  log << "bubble " << format_double(report.bubble) << " (tolerance "
      << format_double(report.bubble_tolerance) << ")\n";
  return kExitOk;
}

int cmd_verify(const RunConfig& config, const CommandContext& ctx) {
  std::ostream& log = log_of(ctx);
  if (!regular(config, log, false)) return kExitCheckFailed;
  const MarketSpec& market = config.market;
  const VerifySection& v = config.verify;
  const Grid grid = config.make_grid();
  const EquilibriumReport report = solve_report(config, ctx, grid);
  const auto surface = report.surface;
  const double tol = report.scheme_tolerance;

  ordered_json checks = ordered_json::object();
  bool passed = true;
  const auto record = [&](const std::string& name, bool ok, ordered_json detail) {
    detail["passed"] = ok;
    checks[name] = std::move(detail);
    passed = passed && ok;
    log << name << ' ' << (ok ? "pass" : "FAIL") << '\n';
  };

  if (v.supermartingale) {
    const SupermartingaleReport sm =
        verify_supermartingale(*surface, report.diagnostics.drift_tolerance);
    ordered_json d = {{"tolerance", sm.tolerance},
                      {"max_drift", sm.max_drift},
                      {"max_deviation", sm.max_deviation},
                      {"positive_violations", sm.positive_violations},
                      {"deviation_violations", sm.deviation_violations}};
    if (sm.worst_drift.layer >= 0)
      d["worst_drift"] = {{"agent", sm.worst_drift.agent},
                          {"t", grid.time(sm.worst_drift.layer)},
                          {"x", state_json(sm.worst_drift.x)},
                          {"value", sm.worst_drift.value}};
    record("supermartingale", sm.passed, std::move(d));

    const double n = static_cast<double>(market.agent_count());
    const double clearing_tol =
        16.0 * n * std::numeric_limits<double>::epsilon() * (market.supply + n * market.short_bound);
    const double residual = report.diagnostics.clearing_residual;
    record("clearing", residual <= clearing_tol,
           {{"residual", residual}, {"tolerance", clearing_tol}});
  }

  if (v.monte_carlo) {
    const ControlAgreement mc =
        check_control_agreement(market, surface, report.price, config.sim, v.se_factor);
    ordered_json fixed = ordered_json::array();
    for (const FixedAgentValue& f : mc.fixed)
      fixed.push_back({{"agent", f.agent},
                       {"estimate", estimate_json(f.estimate)},
                       {"joint_std_error", f.joint_std_error},
                       {"passed", f.passed}});
    record("monte_carlo", mc.passed,
           {{"pde", mc.pde},
            {"feedback", estimate_json(mc.feedback)},
            {"gap", mc.gap},
            {"allowed", mc.allowed},
            {"fixed_agents", fixed}});
  }

  if (v.lattice.enabled) {
    try {
      const double value = run_lattice(config, market.agents);
      ordered_json fundamentals = ordered_json::array();
      double best = -std::numeric_limits<double>::infinity();
      for (const AgentModel& agent : market.agents) {
        AgentModel alone = agent;
        alone.id = 1;
        const double f = run_lattice(config, {alone});
        best = std::max(best, f);
        fundamentals.push_back({{"agent", agent.id}, {"value", f}});
      }
      const double gap = value - best;
      const bool dominates = gap >= -1e-12 * (1.0 + std::abs(value));
      const bool significant = report.bubble > 5.0 * report.bubble_tolerance;
      const bool confirmed = !significant || gap > kLatticeGap;
      record("lattice", dominates && confirmed,
             {{"steps", v.lattice.steps},
              {"value", value},
              {"fundamentals", fundamentals},
              {"gap", gap},
              {"dominates", dominates},
              {"pde_bubble_significant", significant},
              {"bubble_confirmed", confirmed},
              {"pde_difference", value - report.price}});
    } catch (const NumericalError& e) {
      record("lattice", false, {{"error", e.what()}});
    }
  }

  if (v.pnl) {
    SimConfig sim = config.sim;
    sim.paths = v.pnl_paths;
    const PnlDominance pnl = check_pnl_dominance(market, *surface, *report.strategies, sim,
                                                 v.competitors, v.competitor_pieces, v.se_factor);
    ordered_json agents = ordered_json::array();
    for (const AgentPnl& a : pnl.agents)
      agents.push_back({{"agent", a.agent},
                        {"optimal", estimate_json(a.optimal)},
                        {"closest_competitor", estimate_json(a.closest_competitor)},
                        {"worst_margin", a.worst_margin},
                        {"violations", a.violations}});
    record("pnl", pnl.passed,
           {{"competitors", pnl.competitors}, {"holding_range", {pnl.lo, pnl.hi}}, {"agents", agents}});
  }

  ordered_json out = {{"price", report.price},
                      {"scheme_tolerance", tol},
                      {"checks", checks},
                      {"passed", passed}};
  write_json(ctx.out, "verify.json", out);
  log << (passed ? "all checks passed\n" : "some checks failed\n");
  return passed ? kExitOk : kExitCheckFailed;
}

int cmd_simulate(const RunConfig& config, const CommandContext& ctx,
                 std::optional<AgentId> measure) {
  std::ostream& log = log_of(ctx);
  if (!regular(config, log, false)) return kExitCheckFailed;
  const MarketSpec& market = config.market;
  const Grid grid = config.make_grid();
  const auto surface = std::make_shared<const ValueSurface>(
      solve_equilibrium(market.agents, market.payoff, grid, config.solver));
  const StrategyProfile profile = extract_strategies(*surface, market);
  const ControlSelector selector =
      measure ? ControlSelector::fixed(*measure) : ControlSelector::feedback(surface);

  SimConfig sim = config.sim;
  sim.record_paths = true;
  PathBundle bundle = simulate(market.agents, selector, market.x0, market.horizon, sim);
  attach_prices(bundle, *surface);
  attach_holdings(bundle, profile, grid);
  const auto ids = agent_ids(market);

  {
    std::ofstream out = open_output(ctx.out, "paths.csv");
    out << "path,step,t," << coordinate_header(bundle.dim) << ",price";
    for (AgentId id : ids) out << ",h_" << id;
    out << '\n';
    const int L = bundle.steps + 1;
    const std::size_t n = ids.size();
    for (int p = 0; p < std::min(bundle.paths, config.export_paths); ++p)
      for (int m = 0; m < L; ++m) {
        const std::size_t cell = static_cast<std::size_t>(p) * L + m;
        out << p << ',' << m << ',' << format_double(bundle.time(m));
        write_state(out, bundle.state(p, m));
        out << ',' << format_double(bundle.prices[cell]);
        for (std::size_t i = 0; i < n; ++i) out << ',' << format_double(bundle.holdings[cell * n + i]);
        out << '\n';
      }
  }
  {
    std::ofstream out = open_output(ctx.out, "trades.csv");
    write_trades_csv(bundle, ids, out);
  }

  const Estimate value = estimate_value(bundle, market.payoff);
  log << "measure " << bundle.measure_tag() << '\n'
      << "paths " << bundle.paths << ", steps " << bundle.steps << '\n'
      << "payoff mean " << format_double(value.mean) << " +/- " << format_double(value.std_error)
      << '\n'
      << "trades " << count_trades(bundle) << '\n';
  for (AgentId id : ids) {
    const Estimate pnl = realized_pnl(bundle, agent_holdings(bundle, id));
    log << "pnl agent " << id << ' ' << format_double(pnl.mean) << " +/- "
        << format_double(pnl.std_error) << '\n';
  }
  return kExitOk;
}

int cmd_heston_demo(const RunConfig& config, const CommandContext& ctx) {
  using Clock = std::chrono::steady_clock;
  const auto seconds = [](Clock::time_point a) {
    return std::chrono::duration<double>(Clock::now() - a).count();
  };
  std::ostream& log = log_of(ctx);
  const MarketSpec& market = config.market;
  const auto params = heston_params_of(market);
  if (!params || market.dim() != 2)
    throw InvalidArgument("heston-demo needs two mean-reverting agents sharing alpha, beta and level");
  if (!regular(config, log, false)) return kExitCheckFailed;

  const auto start = Clock::now();
  const Grid grid = config.make_grid();
  const EquilibriumReport report = solve_report(config, ctx, grid);
  const auto surface = report.surface;
  const double tol = report.scheme_tolerance;
  log << "pde " << format_double(report.price) << " (tolerance " << format_double(tol) << ", "
      << seconds(start) << " s)\n";

  auto t0 = Clock::now();
  const Estimate quad = quadrature_mc_price(0.0, market.x0(0), market.x0(1), *params, market.payoff,
                                            market.horizon, config.sim);
  log << "quadrature mc " << format_double(quad.mean) << " +/- " << format_double(quad.std_error)
      << " (" << seconds(t0) << " s)\n";

  t0 = Clock::now();
  SimConfig sim = config.sim;
  sim.record_paths = false;
  const Estimate full = estimate_value(
      simulate(market.agents, ControlSelector::feedback(surface), market.x0, market.horizon, sim),
      market.payoff);
  log << "feedback mc " << format_double(full.mean) << " +/- " << format_double(full.std_error)
      << " (" << seconds(t0) << " s)\n";

  const double se_factor = config.verify.se_factor;
  const double tol_factor = config.verify.tolerance_factor;
  const Estimate pde{report.price, 0.0, 0};
  ordered_json pairs = ordered_json::array();
  bool agree = true;
  const auto pair = [&](const char* a, const Estimate& x, const char* b, const Estimate& y) {
    const double gap = std::abs(x.mean - y.mean);
    const double allowed = std::max(se_factor * joint_std_error(x, y), tol_factor * tol);
    agree = agree && gap <= allowed;
    pairs.push_back({{"a", a}, {"b", b}, {"gap", gap}, {"allowed", allowed}, {"passed", gap <= allowed}});
  };
  pair("pde", pde, "quadrature_mc", quad);
  pair("pde", pde, "feedback_mc", full);
  pair("quadrature_mc", quad, "feedback_mc", full);

  const SwitchingReport sw = verify_switching(*surface, market);
  const MonotonicityReport mono = verify_monotonicity(*surface, 10.0 * tol);

  t0 = Clock::now();
  StateVector at_level = market.x0;
  at_level(1) = params->level;
  SimConfig trade_sim = config.sim;
  trade_sim.paths = config.demo.trade_paths;
  trade_sim.record_paths = true;
  PathBundle bundle = simulate(market.agents, ControlSelector::feedback(surface), at_level,
                               market.horizon, trade_sim);
  attach_holdings(bundle, *report.strategies, grid);
  const std::size_t trades = count_trades(bundle);
  log << "trades " << trades << " over " << bundle.paths << " paths (" << seconds(t0) << " s)\n";

  write_surface_outputs(*surface, ctx.out, false);
  {
    std::ofstream out = open_output(ctx.out, "switching.csv");
    out << "s,y,maximizers,h_1,h_2,switching_h_1,switching_h_2\n";
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      const StateVector x = grid.point(node);
      const auto h = report.strategies->holdings(0, node);
      const auto [s1, s2] = switching_strategy(x(1), market);
      out << format_double(x(0)) << ',' << format_double(x(1)) << ','
          << format_mask(surface->maximizers(0, node)) << ',' << format_double(h[0]) << ','
          << format_double(h[1]) << ',' << format_double(s1) << ',' << format_double(s2) << '\n';
    }
  }
  {
    std::ofstream out = open_output(ctx.out, "trades.csv");
    write_trades_csv(bundle, agent_ids(market), out);
  }

  const bool passed = agree && sw.passed && mono.passed && trades > 0;
  ordered_json out = {
      {"x0", state_json(market.x0)},
      {"pde", {{"value", report.price}, {"scheme_tolerance", tol}}},
      {"quadrature_mc", estimate_json(quad)},
      {"feedback_mc", estimate_json(full)},
      {"pairs", pairs},
      {"switching",
       {{"checked", sw.checked}, {"wrong", sw.wrong}, {"ties", sw.ties}, {"passed", sw.passed}}},
      {"monotonicity",
       {{"min_derivative", mono.min_derivative},
        {"tolerance", mono.tolerance},
        {"passed", mono.passed}}},
      {"trades", {{"paths", bundle.paths}, {"count", trades}, {"passed", trades > 0}}},
      {"bubble", report.bubble},
      {"passed", passed},
  };
  write_json(ctx.out, "agreement.json", out);
  log << "switching " << (sw.passed ? "pass" : "FAIL") << ", monotonicity "
      << (mono.passed ? "pass" : "FAIL") << ", agreement " << (agree ? "pass" : "FAIL") << '\n'
      << "total " << seconds(start) << " s\n";
  return passed ? kExitOk : kExitCheckFailed;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const CflViolation& e) {
    err << "numerical error: " << e.what() << "\nhint: set grid.steps to at least "
        << e.required_steps() << " or pass --scheme implicit\n";
    return kExitNumericalFailure;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumericalFailure;
  } catch (const InvalidArgument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::ios_base::failure& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumericalFailure;
  }
}

}  // namespace uveq
