#include "uveq/commands.hpp"
#include "uveq/surface_io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace uveq;
namespace fs = std::filesystem;

namespace {

const char* kSmallCall = R"({
  "schema": 1,
  "market": {
    "agents": [
      {"family": "constant", "vol": 0.1},
      {"family": "constant", "vol": 0.3}
    ],
    "payoff": {"kind": "butterfly", "center": 1.0, "width": 0.2},
    "horizon": 1.0,
    "x0": 1.0
  },
  "grid": {"nodes": 81, "steps": 80},
  "sim": {"paths": 2000, "steps": 40, "seed": 3},
  "verify": {"pnl_paths": 500, "competitors": 5, "lattice": {"enabled": false}}
})";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("uveq_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UVEQ_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "config.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunConfig small(double supply = 1.0, double short_bound = 0.0) {
  RunConfig c = parse_config(kSmallCall, "small.json");
  c.market.supply = supply;
  c.market.short_bound = short_bound;
  return c;
}

CommandContext context(const fs::path& out, std::ostream& log) {
  CommandContext ctx;
  ctx.out = out;
  ctx.log = &log;
  return ctx;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Config, ParsesDefaults) {
  const RunConfig c = parse_config(kSmallCall, "small.json");
  ASSERT_EQ(c.market.agent_count(), 2);
  EXPECT_EQ(c.market.agents[1].id, 2);
  EXPECT_EQ(c.market.supply, 1.0);
  EXPECT_EQ(c.market.short_bound, 0.0);
  EXPECT_EQ(c.market.x0(0), 1.0);
  EXPECT_EQ(c.solver.scheme, Scheme::implicit_euler);
  EXPECT_EQ(c.sim.seed, 3u);
  EXPECT_FALSE(c.verify.lattice.enabled);
  const Grid g = c.make_grid();
  EXPECT_EQ(g.node_count(), 81u);
  EXPECT_EQ(g.steps(), 80);
}

TEST(Config, ErrorsCarryLineAndPointer) {
  EXPECT_EQ(config_error(R"({
  "schema": 1,
  "market": {
    "agents": [{"family": "constant", "vol": 0.1}],
    "payoff": {"kind": "call", "strike": 1.0},
    "x0": 1.0
  }
})"),
            "config.json:3: /market: missing required field 'horizon'");
  EXPECT_EQ(config_error("{\n  \"schema\": 1,\n  \"market\": {\n    \"agents\": [],"
                         "\"horizon\": 1, \"x0\": 1, \"payoff\": {\"kind\": \"identity\"}\n  }\n}"),
            "config.json:4: /market/agents: need at least one agent");
  EXPECT_EQ(config_error(R"({
  "schema": 1,
  "market": {
    "agents": [
      {"family": "constant", "vol": 0.1},
      {"family": "constant", "vol": -0.3}
    ],
    "payoff": {"kind": "call", "strike": 1.0},
    "horizon": 1.0,
    "x0": 1.0
  }
})"),
            "config.json:6: /market/agents/1: volatility must be nonnegative");
  const std::string typo = config_error(
      "{\"schema\": 1,\n\"market\": {\"agents\": [{\"family\": \"constant\", \"vol\": 0.1}],\n"
      "\"payoff\": {\"kind\": \"call\", \"strike\": 1}, \"horizon\": 1, \"x0\": 1},\n"
      "\"sim\": {\"sedd\": 4}}");
  EXPECT_EQ(typo, "config.json:4: /sim/sedd: unknown field 'sedd'");
}

TEST(Config, RejectsSyntaxAndSchemaVersion) {
  EXPECT_NE(config_error("{\n\"schema\": 1,\n\"market\": {\n}}}").find("config.json:4"), std::string::npos);
  const std::string version = config_error(R"({"schema": 2})");
  EXPECT_NE(version.find("/schema"), std::string::npos) << version;
  EXPECT_NE(config_error("[]"), "");
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  const fs::path good = write_file(dir, "good.json", kSmallCall);
  EXPECT_EQ(run_cli("validate --config " + good.string()), kExitOk);

  std::string flat = kSmallCall;
  flat.replace(flat.find("0.1}"), 3, "0.0");
  const fs::path degenerate = write_file(dir, "degenerate.json", flat);
  EXPECT_EQ(run_cli("validate --config " + degenerate.string()), kExitCheckFailed);

  EXPECT_EQ(run_cli("validate --config " + (dir / "missing.json").string()), kExitConfigError);
  EXPECT_EQ(run_cli("validate --config " + write_file(dir, "bad.json", "{").string()), kExitConfigError);
  EXPECT_EQ(run_cli("validate"), kExitConfigError);
  EXPECT_EQ(run_cli("price --config " + good.string() + " --bogus"), kExitConfigError);
  EXPECT_EQ(run_cli("simulate --config " + good.string() + " --measure agent:x --out " +
                    (dir / "sim").string()),
            kExitConfigError);
  std::string few_steps = kSmallCall;
  few_steps.replace(few_steps.find("\"steps\": 80"), 11, "\"steps\": 5");
  const fs::path cfl = write_file(dir, "cfl.json", few_steps);
  EXPECT_EQ(run_cli("price --config " + cfl.string() + " --scheme explicit --out " +
                    (dir / "cfl").string()),
            kExitNumericalFailure);
}

TEST(Cli, PriceWritesOutputs) {
  const fs::path dir = scratch("price");
  std::ostringstream log;
  ASSERT_EQ(cmd_price(small(), context(dir, log)), kExitOk);
  for (const char* f : {"report.json", "surface.csv", "surface.bin", "strategies.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  const ValueSurface s = load_surface((dir / "surface.bin").string());
  EXPECT_EQ(report["price"].get<double>(), s.value_at_origin(small().market.x0));
  EXPECT_GT(report["bubble"].get<double>(), 0.0);
  EXPECT_EQ(report["fundamentals"].size(), 2u);
  EXPECT_NE(log.str().find("bubble"), std::string::npos);
}

TEST(Cli, SupplyAndShortBoundOnlyMoveHoldings) {
  struct Run {
    double s0, k;
    std::string surface, strategies;
    nlohmann::json report;
  };
  std::vector<Run> runs{{1.0, 0.0}, {0.0, 1.0}, {2.0, 3.0}};
  for (Run& r : runs) {
    const fs::path dir = scratch("invariance_" + std::to_string(static_cast<int>(r.s0)));
    std::ostringstream log;
    ASSERT_EQ(cmd_price(small(r.s0, r.k), context(dir, log)), kExitOk);
    r.surface = slurp(dir / "surface.csv");
    r.strategies = slurp(dir / "strategies.csv");
    r.report = nlohmann::json::parse(slurp(dir / "report.json"));
  }
  const auto base = csv_rows(runs[0].strategies);
  for (const Run& r : runs) {
    EXPECT_EQ(r.surface, runs[0].surface);
    for (const char* key : {"price", "bubble", "scheme_tolerance", "bubble_tolerance", "fundamentals"})
      EXPECT_EQ(r.report[key], runs[0].report[key]) << key;
    // Holdings map h = (1 + 0 (n - m)) / m to (s0 + k (n - m)) / m, or 0 to -k.
    const auto rows = csv_rows(r.strategies);
    ASSERT_EQ(rows.size(), base.size());
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double h1 = std::stod(base[i][2]), h2 = std::stod(base[i][3]);
      const int m = (h1 > 0.0) + (h2 > 0.0);
      for (int a = 0; a < 2; ++a) {
        const double was = a == 0 ? h1 : h2;
        const double expected = was > 0.0 ? (r.s0 + r.k * (2 - m)) / m : 0.0 - r.k;
        EXPECT_EQ(std::stod(rows[i][2 + a]), expected);
      }
    }
  }
}

TEST(Cli, SimulateIsReproducible) {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(small(), context(a, log), std::nullopt), kExitOk);
  ASSERT_EQ(cmd_simulate(small(), context(b, log), std::nullopt), kExitOk);
  for (const char* f : {"paths.csv", "trades.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_GT(slurp(a / f).size(), 0u);
  }
  const fs::path c = scratch("sim_c");
  ASSERT_EQ(cmd_simulate(small(), context(c, log), 2), kExitOk);
  EXPECT_NE(slurp(a / "paths.csv"), slurp(c / "paths.csv"));
}

TEST(Cli, VerifyPassesForConvexClaim) {
  const fs::path dir = scratch("verify");
  std::ostringstream log;
  RunConfig c = small();
  c.market.payoff = PayoffSpec::call(1.0);
  c.grid.nodes = {201};
  c.grid.steps = 200;
  c.sim.paths = 20000;
  c.sim.steps = 400;
  EXPECT_EQ(cmd_verify(c, context(dir, log)), kExitOk) << log.str();
  const auto v = nlohmann::json::parse(slurp(dir / "verify.json"));
  EXPECT_TRUE(v["passed"].get<bool>());
  for (const char* check : {"supermartingale", "clearing", "monte_carlo", "pnl"})
    EXPECT_TRUE(v["checks"].contains(check)) << check;
}

TEST(Cli, VerifyFlagsUnderresolvedGrid) {
  const fs::path dir = scratch("coarse");
  std::ostringstream log;
  RunConfig c = parse_config(R"({
    "schema": 1,
    "market": {
      "agents": [{"family": "constant", "vol": 0.2}],
      "payoff": {"kind": "call", "strike": 1.0},
      "horizon": 1.0,
      "x0": 1.0
    },
    "grid": {"nodes": 11, "steps": 20},
    "sim": {"paths": 100000, "steps": 1, "seed": 1},
    "verify": {"pnl": false, "lattice": {"enabled": false}}
  })", "coarse.json");
  CommandContext ctx = context(dir, log);
  ctx.tolerance = 1e-6;
  EXPECT_EQ(cmd_verify(c, ctx), kExitCheckFailed);
  const auto v = nlohmann::json::parse(slurp(dir / "verify.json"));
  EXPECT_FALSE(v["checks"]["monte_carlo"]["passed"].get<bool>());
}
