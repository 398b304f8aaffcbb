#include "uveq/commands.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <iostream>

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string scheme;
  std::optional<double> tolerance;
  std::string measure = "feedback";
};

void add_common(CLI::App* cmd, Flags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "JSON run configuration");
  if (config_required) opt->required();
  cmd->add_option("--out", f.out, "output directory (default: the config's output field)");
  cmd->add_option("--seed", f.seed, "Monte Carlo seed");
  cmd->add_option("--threads", f.threads, "OpenMP threads")->check(CLI::PositiveNumber);
  cmd->add_option("--scheme", f.scheme, "time stepping scheme")
      ->check(CLI::IsMember({"explicit", "implicit"}));
  cmd->add_option("--tolerance", f.tolerance, "scheme tolerance used by the checks")
      ->check(CLI::PositiveNumber);
}

uveq::RunConfig resolve(const Flags& f, uveq::CommandContext& ctx) {
  uveq::RunConfig cfg = f.config.empty() ? uveq::heston_demo_config() : uveq::load_config(f.config);
  if (f.seed) cfg.sim.seed = *f.seed;
  if (!f.scheme.empty())
    cfg.solver.scheme = f.scheme == "explicit" ? uveq::Scheme::explicit_euler : uveq::Scheme::implicit_euler;
  if (f.threads) omp_set_num_threads(*f.threads);
  ctx.out = f.out.empty() ? cfg.output : f.out;
  ctx.tolerance = f.tolerance;
  return cfg;
}

std::optional<uveq::AgentId> parse_measure(const std::string& text) {
  if (text == "feedback") return std::nullopt;
  std::string digits = text.rfind("agent:", 0) == 0 ? text.substr(6) : text;
  try {
    std::size_t used = 0;
    const int id = std::stoi(digits, &used);
    if (used == digits.size() && id >= 1 && id <= uveq::kMaxAgents) return id;
  } catch (const std::exception&) {
  }
  throw uveq::InvalidArgument("--measure expects 'feedback', an agent id or 'agent:<id>', got '" +
                              text + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium prices under heterogeneous beliefs"};
  app.require_subcommand(1);
  Flags f;

  auto* validate = app.add_subcommand("validate", "check model regularity");
  auto* price = app.add_subcommand("price", "solve the equilibrium and write the report");
  auto* verify = app.add_subcommand("verify", "run the verification checks");
  auto* simulate = app.add_subcommand("simulate", "simulate paths, holdings and trades");
  auto* demo = app.add_subcommand("heston-demo", "two-factor switching example");
  for (auto* cmd : {validate, price, verify, simulate}) add_common(cmd, f, true);
  add_common(demo, f, false);
  simulate->add_option("--measure", f.measure, "feedback, or the agent whose model drives the paths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? uveq::kExitOk : uveq::kExitConfigError;
  }

  return uveq::guarded(
      [&] {
        uveq::CommandContext ctx;
        const uveq::RunConfig cfg = resolve(f, ctx);
        if (validate->parsed()) return uveq::cmd_validate(cfg, ctx);
        if (price->parsed()) return uveq::cmd_price(cfg, ctx);
        if (verify->parsed()) return uveq::cmd_verify(cfg, ctx);
        if (simulate->parsed()) return uveq::cmd_simulate(cfg, ctx, parse_measure(f.measure));
        return uveq::cmd_heston_demo(cfg, ctx);
      },
      std::cerr);
}
