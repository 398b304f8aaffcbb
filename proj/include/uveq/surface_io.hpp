#pragma once

#include "uveq/pde.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace uveq {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal form (17 significant digits at most).
std::string format_double(double value);
/// "1|3" for a set containing agents 1 and 3.
std::string format_mask(AgentMask mask);

/// Time layers to export: all of them when the row count stays below
/// max_rows, otherwise an evenly strided subset that includes 0 and M.
std::vector<int> export_layers(const Grid& grid, std::size_t max_rows = 2'000'000);

/// One row per (layer, node): t, x_0[, x_1], v, maximizers, mu_<id>... The
/// drift columns are empty on the terminal layer.
void write_surface_csv(const ValueSurface& surface, std::ostream& out,
                       const std::vector<int>& layers);

inline constexpr char kSurfaceMagic[8] = {'U', 'V', 'E', 'Q', 'S', 'U', 'R', 'F'};
inline constexpr std::uint32_t kSurfaceVersion = 1;

/// Binary layout documented in README.md ("Surface file format").
void write_surface_binary(const ValueSurface& surface, std::ostream& out);
ValueSurface read_surface_binary(std::istream& in);

void save_surface(const ValueSurface& surface, const std::string& path);
ValueSurface load_surface(const std::string& path);

}  // namespace uveq
