#pragma once

#include "uveq/heston.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace uveq {

/// Schema violation or syntax error, anchored at "source:line: /pointer: message".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& pointer,
              const std::string& message);
  int line() const { return line_; }
  const std::string& pointer() const { return pointer_; }

 private:
  int line_;
  std::string pointer_;
};

inline constexpr int kSchemaVersion = 1;

struct GridSection {
  /// Width-rule bounds when empty, explicit [lo, hi] per axis otherwise.
  std::vector<std::pair<double, double>> bounds;
  std::vector<int> nodes;
  int steps = 200;
  double width = kDefaultWidth;
};

struct LatticeSection {
  bool enabled = true;
  int steps = 10;
  /// Defaults to 0.1 per axis.
  std::vector<double> increments;
};

struct VerifySection {
  bool supermartingale = true;
  bool monte_carlo = true;
  bool pnl = true;
  LatticeSection lattice;
  /// Recorded paths per agent for the P&L comparison.
  int pnl_paths = 10000;
  int competitors = 50;
  int competitor_pieces = 4;
  double se_factor = 3.0;
  /// Multiple of the scheme tolerance allowed between PDE and Monte Carlo.
  double tolerance_factor = 2.0;
};

struct DemoSection {
  /// Recorded paths started at the level for the trade count.
  int trade_paths = 10000;
};

struct RunConfig {
  std::string source = "<config>";
  MarketSpec market;
  GridSection grid;
  SimConfig sim;
  SolverOptions solver{.scheme = Scheme::implicit_euler};
  VerifySection verify;
  DemoSection demo;
  /// Paths written to paths.csv by the simulate command.
  int export_paths = 100;
  std::string output = "out";

  Grid make_grid() const;
  /// Regularity sample: the grid box at t in {0, T/2, T}, 11 points per axis.
  SampleLattice sample_lattice() const;
};

RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// The two-factor demo market as a config, with the grid sizes used by the
/// acceptance run.
RunConfig heston_demo_config(const HestonTypeParams& params = {});

}  // namespace uveq
