#include "uveq/surface_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <ostream>

namespace uveq {

static_assert(std::endian::native == std::endian::little,
              "the surface file format is little-endian");

std::string format_double(double value) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

std::string format_mask(AgentMask mask) {
  std::string out;
  for (int id = 1; id <= kMaxAgents; ++id) {
    if (!(mask & agent_bit(id))) continue;
    if (!out.empty()) out += '|';
    out += std::to_string(id);
  }
  return out;
}

std::vector<int> export_layers(const Grid& grid, std::size_t max_rows) {
  const int M = grid.steps();
  const std::size_t per_layer = grid.node_count();
  std::vector<int> layers;
  if (per_layer * static_cast<std::size_t>(M + 1) <= max_rows) {
    for (int m = 0; m <= M; ++m) layers.push_back(m);
    return layers;
  }
  const auto budget = std::max<std::size_t>(2, max_rows / per_layer);
  const int stride = std::max(1, static_cast<int>((M + budget - 2) / (budget - 1)));
  for (int m = 0; m < M; m += stride) layers.push_back(m);
  layers.push_back(M);
  return layers;
}

void write_surface_csv(const ValueSurface& surface, std::ostream& out,
                       const std::vector<int>& layers) {
  const Grid& grid = surface.grid();
  out << "t";
  for (int j = 0; j < grid.dim(); ++j) out << ",x" << j;
  out << ",v,maximizers";
  for (const AgentModel& a : surface.agents()) out << ",mu_" << a.id;
  out << '\n';

  std::string row;
  for (int m : layers) {
    if (m < 0 || m > grid.steps()) throw InvalidArgument("export layer out of range");
    const std::string t = format_double(grid.time(m));
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      row = t;
      const StateVector x = grid.point(node);
      for (int j = 0; j < grid.dim(); ++j) (row += ',') += format_double(x(j));
      (row += ',') += format_double(surface.value(m, node));
      (row += ',') += format_mask(surface.maximizers(m, node));
      for (int i = 0; i < surface.agent_count(); ++i) {
        row += ',';
        if (m < grid.steps()) row += format_double(surface.drift(i, m, node));
      }
      row += '\n';
      out << row;
    }
  }
}

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof value);
  }
  template <typename T>
  void put_array(const std::vector<T>& values) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(T)));
  }
  void put_size(std::size_t n) { put(static_cast<std::uint32_t>(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof value);
    if (!in_) throw FormatError("surface file is truncated");
    return value;
  }
  template <typename T>
  std::vector<T> get_array(std::size_t n) {
    std::vector<T> values(n);
    in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in_) throw FormatError("surface file is truncated");
    return values;
  }
  std::size_t get_size(std::size_t limit) {
    const auto n = get<std::uint32_t>();
    if (n > limit) throw FormatError("surface file has an implausible size field");
    return n;
  }

 private:
  std::istream& in_;
};

constexpr std::size_t kMaxTable = 1u << 24;

void put_affine(Writer& w, const ClippedAffine& f) {
  w.put(f.base);
  w.put(f.slope);
  w.put(f.lo);
  w.put(f.hi);
}

ClippedAffine get_affine(Reader& r) {
  ClippedAffine f;
  f.base = r.get<double>();
  f.slope = r.get<double>();
  f.lo = r.get<double>();
  f.hi = r.get<double>();
  return f;
}

void put_agent(Writer& w, const AgentModel& agent) {
  w.put(static_cast<std::int32_t>(agent.id));
  w.put(static_cast<std::uint32_t>(agent.coefficients.family()));
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantCoefficients>) {
          w.put_size(static_cast<std::size_t>(p.vol.rows()));
          w.put_size(static_cast<std::size_t>(p.vol.cols()));
          for (Eigen::Index i = 0; i < p.drift.size(); ++i) w.put(p.drift(i));
          for (Eigen::Index c = 0; c < p.vol.cols(); ++c)
            for (Eigen::Index r = 0; r < p.vol.rows(); ++r) w.put(p.vol(r, c));
        } else if constexpr (std::is_same_v<P, LocalVolTable>) {
          w.put_size(p.times.size());
          w.put_size(p.states.size());
          w.put_array(p.times);
          w.put_array(p.states);
          for (Eigen::Index i = 0; i < p.vols.rows(); ++i)
            for (Eigen::Index j = 0; j < p.vols.cols(); ++j) w.put(p.vols(i, j));
          w.put(p.drift);
          w.put(static_cast<std::uint32_t>(p.policy));
        } else {
          put_affine(w, p.alpha);
          put_affine(w, p.beta);
          w.put(p.speed);
          w.put(p.level);
        }
      },
      agent.coefficients.parameters());
}

AgentModel get_agent(Reader& r) {
  const auto id = r.get<std::int32_t>();
  const auto family = r.get<std::uint32_t>();
  switch (static_cast<Family>(family)) {
    case Family::constant: {
      const auto rows = r.get_size(kMaxDim);
      const auto cols = r.get_size(kMaxDim);
      StateVector drift(static_cast<Eigen::Index>(rows));
      for (std::size_t i = 0; i < rows; ++i) drift(static_cast<Eigen::Index>(i)) = r.get<double>();
      DiffusionMatrix vol(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index c = 0; c < vol.cols(); ++c)
        for (Eigen::Index k = 0; k < vol.rows(); ++k) vol(k, c) = r.get<double>();
      return build_constant(id, drift, vol);
    }
    case Family::local_vol_table: {
      LocalVolTable table;
      const auto nt = r.get_size(kMaxTable);
      const auto ns = r.get_size(kMaxTable);
      table.times = r.get_array<double>(nt);
      table.states = r.get_array<double>(ns);
      table.vols.resize(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(ns));
      for (Eigen::Index i = 0; i < table.vols.rows(); ++i)
        for (Eigen::Index j = 0; j < table.vols.cols(); ++j) table.vols(i, j) = r.get<double>();
      table.drift = r.get<double>();
      const auto policy = r.get<std::uint32_t>();
      if (policy > 1) throw FormatError("unknown out-of-domain policy in surface file");
      table.policy = static_cast<OutOfDomain>(policy);
      return build_local_vol(id, std::move(table));
    }
    case Family::mean_reverting: {
      const ClippedAffine alpha = get_affine(r);
      const ClippedAffine beta = get_affine(r);
      const double speed = r.get<double>();
      const double level = r.get<double>();
      return build_mean_reverting(id, alpha, beta, speed, level);
    }
  }
  throw FormatError("unknown model family in surface file");
}

void put_payoff(Writer& w, const PayoffSpec& f) {
  w.put(static_cast<std::uint32_t>(f.kind()));
  w.put(static_cast<std::uint32_t>(f.coordinate()));
  w.put_size(f.parameters().size());
  w.put_array(f.parameters());
  w.put_size(f.knots().size());
  for (const auto& [x, y] : f.knots()) {
    w.put(x);
    w.put(y);
  }
}

PayoffSpec get_payoff(Reader& r) {
  const auto kind = static_cast<PayoffKind>(r.get<std::uint32_t>());
  const auto coordinate = static_cast<int>(r.get<std::uint32_t>());
  const auto params = r.get_array<double>(r.get_size(16));
  const auto nk = r.get_size(kMaxTable);
  std::vector<std::pair<double, double>> knots(nk);
  for (auto& [x, y] : knots) {
    x = r.get<double>();
    y = r.get<double>();
  }
  const auto need = [&](std::size_t n) {
    if (params.size() != n) throw FormatError("payoff parameter count mismatch in surface file");
  };
  switch (kind) {
    case PayoffKind::call: need(1); return PayoffSpec::call(params[0], coordinate);
    case PayoffKind::put: need(1); return PayoffSpec::put(params[0], coordinate);
    case PayoffKind::butterfly: need(2); return PayoffSpec::butterfly(params[0], params[1], coordinate);
    case PayoffKind::table: return PayoffSpec::table(std::move(knots), coordinate);
    case PayoffKind::identity: return PayoffSpec::identity(coordinate);
    case PayoffKind::constant: need(1); return PayoffSpec::constant(params[0]);
  }
  throw FormatError("unknown payoff kind in surface file");
}

}  // namespace

void write_surface_binary(const ValueSurface& surface, std::ostream& out) {
  Writer w(out);
  const Grid& grid = surface.grid();
  out.write(kSurfaceMagic, sizeof kSurfaceMagic);
  w.put(kSurfaceVersion);
  w.put(static_cast<std::uint32_t>(grid.dim()));
  w.put(static_cast<std::uint32_t>(surface.scheme() == Scheme::implicit_euler ? 1 : 0));
  w.put_size(surface.agents().size());
  w.put(static_cast<std::uint32_t>(grid.steps()));
  w.put(grid.horizon());
  for (int j = 0; j < grid.dim(); ++j) {
    w.put(grid.axis(j).lo);
    w.put(grid.axis(j).hi);
    w.put(static_cast<std::uint32_t>(grid.axis(j).nodes));
  }
  put_payoff(w, surface.payoff());
  for (const AgentModel& a : surface.agents()) put_agent(w, a);
  w.put(surface.residual_tolerance());
  w.put(surface.linear_residual());
  w.put_array(surface.excess());
  w.put_array(surface.maximizer_field());
  for (const auto& mu : surface.drift_fields()) w.put_array(mu);
  if (!out) throw FormatError("failed to write surface");
}

ValueSurface read_surface_binary(std::istream& in) {
  char magic[sizeof kSurfaceMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kSurfaceMagic, sizeof magic) != 0)
    throw FormatError("not a surface file (bad magic)");
  Reader r(in);
  const auto version = r.get<std::uint32_t>();
  if (version != kSurfaceVersion)
    throw FormatError("unsupported surface file version " + std::to_string(version));
  const auto d = r.get_size(kMaxDim);
  const auto scheme_code = r.get<std::uint32_t>();
  if (scheme_code > 1) throw FormatError("unknown scheme in surface file");
  const auto n = r.get_size(kMaxAgents);
  const auto steps = r.get_size(kMaxTable);
  const double horizon = r.get<double>();
  std::vector<Axis> axes(d);
  for (Axis& a : axes) {
    a.lo = r.get<double>();
    a.hi = r.get<double>();
    a.nodes = static_cast<int>(r.get_size(kMaxTable));
  }
  Grid grid(std::move(axes), static_cast<int>(steps), horizon);
  PayoffSpec payoff = get_payoff(r);
  std::vector<AgentModel> agents;
  for (std::size_t i = 0; i < n; ++i) agents.push_back(get_agent(r));
  const double residual_tolerance = r.get<double>();
  const double linear_residual = r.get<double>();
  const std::size_t total = grid.node_count() * (steps + 1);
  auto excess = r.get_array<double>(total);
  auto masks = r.get_array<AgentMask>(total);
  std::vector<std::vector<double>> drifts;
  for (std::size_t i = 0; i < n; ++i) drifts.push_back(r.get_array<double>(total));
  const Scheme scheme = scheme_code == 1 ? Scheme::implicit_euler : Scheme::explicit_euler;
  return ValueSurface::from_fields(std::move(grid), std::move(agents), scheme, std::move(payoff),
                                   std::move(excess), std::move(masks), std::move(drifts),
                                   residual_tolerance, linear_residual);
}

void save_surface(const ValueSurface& surface, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_surface_binary(surface, out);
}

ValueSurface load_surface(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_surface_binary(in);
}

}  // namespace uveq
