#pragma once

#include "uveq/config.hpp"

#include <filesystem>
#include <iosfwd>

namespace uveq {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfigError = 2,
  kExitNumericalFailure = 3,
};

struct CommandContext {
  std::filesystem::path out = "out";
  /// Replaces the estimated scheme tolerance when set.
  std::optional<double> tolerance;
  std::ostream* log = nullptr;
};

/// Regularity report per agent; fails when any agent is not elliptic.
int cmd_validate(const RunConfig& config, const CommandContext& ctx);

/// report.json, surface.csv, surface.bin and strategies.csv.
int cmd_price(const RunConfig& config, const CommandContext& ctx);

/// verify.json with supermartingale, Monte Carlo, lattice and P&L checks.
int cmd_verify(const RunConfig& config, const CommandContext& ctx);

/// paths.csv and trades.csv under one agent's measure, or the feedback
/// control when `measure` is empty.
int cmd_simulate(const RunConfig& config, const CommandContext& ctx,
                 std::optional<AgentId> measure);

/// Two-factor switching demo: surface.csv, switching.csv, agreement.json and
/// trades.csv.
int cmd_heston_demo(const RunConfig& config, const CommandContext& ctx);

/// Runs `body` and maps library exceptions to exit codes, printing the
/// message (with a remediation hint where one exists) to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace uveq
