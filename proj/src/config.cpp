#include "uveq/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace uveq {

using nlohmann::json;

ConfigError::ConfigError(const std::string& source, int line, const std::string& pointer,
                         const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " +
                         (pointer.empty() ? std::string("/") : pointer) + ": " + message),
      line_(line),
      pointer_(pointer) {}

namespace {

std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

// Forward iterator over the text that remembers the furthest byte read.
struct TrackingIterator {
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  const char* p = nullptr;
  const char* base = nullptr;
  std::size_t* furthest = nullptr;

  reference operator*() const {
    *furthest = std::max(*furthest, static_cast<std::size_t>(p - base));
    return *p;
  }
  TrackingIterator& operator++() {
    ++p;
    return *this;
  }
  TrackingIterator operator++(int) {
    TrackingIterator old = *this;
    ++p;
    return old;
  }
  bool operator==(const TrackingIterator& other) const { return p == other.p; }
};

int line_at(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.empty() ? 0 : text.size() - 1);
  // The lexer may have read one character past a number.
  while (offset > 0 && std::isspace(static_cast<unsigned char>(text[offset]))) --offset;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + offset, '\n'));
}

// Records the line of every JSON pointer: keys at the key, array elements at
// their first token.
class LineRecorder : public nlohmann::json_sax<json> {
 public:
  LineRecorder(std::string_view text, const std::size_t* furthest) : text_(text), furthest_(furthest) {
    lines_[""] = 1;
  }

  std::map<std::string, int> take() { return std::move(lines_); }

  bool null() override { return scalar(); }
  bool boolean(bool) override { return scalar(); }
  bool number_integer(number_integer_t) override { return scalar(); }
  bool number_unsigned(number_unsigned_t) override { return scalar(); }
  bool number_float(number_float_t, const string_t&) override { return scalar(); }
  bool string(string_t&) override { return scalar(); }
  bool binary(binary_t&) override { return scalar(); }

  bool start_object(std::size_t) override {
    const std::string self = element();
    frames_.push_back({self, false, 0, {}});
    return true;
  }
  bool key(string_t& k) override {
    Frame& f = frames_.back();
    f.key = escape_token(k);
    lines_[f.pointer + "/" + f.key] = here();
    return true;
  }
  bool end_object() override {
    frames_.pop_back();
    return true;
  }
  bool start_array(std::size_t) override {
    const std::string self = element();
    frames_.push_back({self, true, 0, {}});
    return true;
  }
  bool end_array() override {
    frames_.pop_back();
    return true;
  }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) override {
    return false;
  }

 private:
  struct Frame {
    std::string pointer;
    bool array;
    std::size_t index;
    std::string key;
  };

  int here() const { return line_at(text_, *furthest_); }

  // Pointer of the value starting now; array elements get their line here.
  std::string element() {
    if (frames_.empty()) return "";
    Frame& f = frames_.back();
    if (!f.array) return f.pointer + "/" + f.key;
    std::string p = f.pointer + "/" + std::to_string(f.index++);
    lines_[p] = here();
    return p;
  }
  bool scalar() {
    element();
    return true;
  }

  std::string_view text_;
  const std::size_t* furthest_;
  std::vector<Frame> frames_;
  std::map<std::string, int> lines_;
};

class Document {
 public:
  Document(std::string_view text, std::string source) : source_(std::move(source)) {
    try {
      root_ = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
      std::string what = e.what();
      if (const auto colon = what.find("syntax error"); colon != std::string::npos)
        what = what.substr(colon);
      throw ConfigError(source_, line_at(text, e.byte > 0 ? e.byte - 1 : 0), "", what);
    }
    std::size_t furthest = 0;
    TrackingIterator first{text.data(), text.data(), &furthest};
    TrackingIterator last{text.data() + text.size(), text.data(), &furthest};
    LineRecorder recorder(text, &furthest);
    json::sax_parse(first, last, &recorder);
    lines_ = recorder.take();
  }

  const json& root() const { return root_; }
  const std::string& source() const { return source_; }

  int line(std::string pointer) const {
    while (true) {
      if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
      const auto slash = pointer.rfind('/');
      if (slash == std::string::npos) return 1;
      pointer.resize(slash);
    }
  }

  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
    throw ConfigError(source_, line(pointer), pointer, message);
  }

 private:
  std::string source_;
  json root_;
  std::map<std::string, int> lines_;
};

class Node {
 public:
  Node(const Document& doc, const json& value, std::string pointer)
      : doc_(&doc), value_(&value), pointer_(std::move(pointer)) {}

  const std::string& pointer() const { return pointer_; }
  const json& raw() const { return *value_; }
  [[noreturn]] void fail(const std::string& message) const { doc_->fail(pointer_, message); }

  void expect_object(std::initializer_list<std::string_view> allowed) const {
    if (!value_->is_object()) fail("expected an object");
    for (const auto& [key, _] : value_->items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        doc_->fail(pointer_ + "/" + escape_token(key), "unknown field '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return value_->contains(key); }

  Node at(const std::string& key) const {
    if (!value_->contains(key)) fail("missing required field '" + key + "'");
    return {*doc_, (*value_)[key], pointer_ + "/" + escape_token(key)};
  }
  std::optional<Node> find(const std::string& key) const {
    if (!value_->contains(key)) return std::nullopt;
    return Node{*doc_, (*value_)[key], pointer_ + "/" + escape_token(key)};
  }

  std::size_t size() const {
    if (!value_->is_array()) fail("expected an array");
    return value_->size();
  }
  Node operator[](std::size_t i) const {
    return {*doc_, (*value_)[i], pointer_ + "/" + std::to_string(i)};
  }
  bool is_array() const { return value_->is_array(); }
  bool is_number() const { return value_->is_number(); }

  double number() const {
    if (!value_->is_number()) fail("expected a number");
    return value_->get<double>();
  }
  double number_in(double lo, double hi, const char* what) const {
    const double x = number();
    if (!(x >= lo && x <= hi)) {
      std::ostringstream msg;
      msg << what << " must lie in [" << lo << ", " << hi << "], got " << x;
      fail(msg.str());
    }
    return x;
  }
  double positive() const {
    const double x = number();
    if (!(x > 0.0)) fail("expected a positive number");
    return x;
  }
  long long integer(long long lo, long long hi) const {
    if (!value_->is_number_integer()) fail("expected an integer");
    const long long x = value_->get<long long>();
    if (x < lo || x > hi)
      fail("expected an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return x;
  }
  std::uint64_t unsigned_integer() const {
    if (!value_->is_number_unsigned()) fail("expected a nonnegative integer");
    return value_->get<std::uint64_t>();
  }
  bool boolean() const {
    if (!value_->is_boolean()) fail("expected true or false");
    return value_->get<bool>();
  }
  std::string string() const {
    if (!value_->is_string()) fail("expected a string");
    return value_->get<std::string>();
  }
  std::vector<double> numbers() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)[i].number();
    return out;
  }

 private:
  const Document* doc_;
  const json* value_;
  std::string pointer_;
};

template <typename F>
auto anchored(const Node& node, F&& build) {
  try {
    return build();
  } catch (const InvalidArgument& e) {
    node.fail(e.what());
  }
}

ClippedAffine read_clipped(const Node& node) {
  node.expect_object({"base", "slope", "lo", "hi"});
  return {node.at("base").number(), node.at("slope").number(), node.at("lo").number(),
          node.at("hi").number()};
}

DiffusionMatrix read_matrix(const Node& node) {
  const std::size_t rows = node.size();
  if (rows < 1 || rows > kMaxDim) node.fail("volatility matrix needs 1 or 2 rows");
  const std::size_t cols = node[0].size();
  if (cols < 1 || cols > kMaxDim) node.fail("volatility matrix needs 1 or 2 columns");
  DiffusionMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const Node row = node[r];
    if (row.size() != cols) row.fail("rows of the volatility matrix differ in length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].number();
  }
  return m;
}

AgentModel read_agent(const Node& node, AgentId default_id) {
  if (!node.raw().is_object()) node.fail("expected an object");
  const std::string family = node.at("family").string();
  const AgentId id = node.has("id") ? static_cast<AgentId>(node.at("id").integer(1, kMaxAgents))
                                    : default_id;
  if (family == "constant") {
    node.expect_object({"id", "family", "drift", "vol"});
    const Node vol = node.at("vol");
    if (vol.is_number()) {
      const double drift = node.has("drift") ? node.at("drift").number() : 0.0;
      return anchored(node, [&] { return build_constant(id, drift, vol.number()); });
    }
    const DiffusionMatrix sigma = read_matrix(vol);
    StateVector drift = StateVector::Zero(sigma.rows());
    if (auto d = node.find("drift")) {
      const auto values = d->numbers();
      if (values.size() != static_cast<std::size_t>(sigma.rows()))
        d->fail("drift length must equal the number of volatility rows");
      for (std::size_t j = 0; j < values.size(); ++j) drift(static_cast<Eigen::Index>(j)) = values[j];
    }
    return anchored(node, [&] { return build_constant(id, drift, sigma); });
  }
  if (family == "local_vol") {
    node.expect_object({"id", "family", "times", "states", "vols", "drift", "out_of_domain"});
    LocalVolTable table;
    table.times = node.at("times").numbers();
    table.states = node.at("states").numbers();
    const Node vols = node.at("vols");
    if (vols.size() != table.times.size()) vols.fail("need one row of vols per time");
    table.vols.resize(static_cast<Eigen::Index>(table.times.size()),
                      static_cast<Eigen::Index>(table.states.size()));
    for (std::size_t r = 0; r < table.times.size(); ++r) {
      const auto row = vols[r].numbers();
      if (row.size() != table.states.size()) vols[r].fail("need one vol per state");
      for (std::size_t c = 0; c < row.size(); ++c)
        table.vols(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
    if (node.has("drift")) table.drift = node.at("drift").number();
    if (auto policy = node.find("out_of_domain")) {
      const std::string p = policy->string();
      if (p == "clamp")
        table.policy = OutOfDomain::clamp;
      else if (p == "reject")
        table.policy = OutOfDomain::reject;
      else
        policy->fail("expected \"clamp\" or \"reject\"");
    }
    return anchored(node, [&] { return build_local_vol(id, std::move(table)); });
  }
  if (family == "mean_reverting") {
    node.expect_object({"id", "family", "alpha", "beta", "speed", "level"});
    const ClippedAffine alpha = read_clipped(node.at("alpha"));
    const ClippedAffine beta = read_clipped(node.at("beta"));
    const double speed = node.at("speed").number();
    const double level = node.has("level") ? node.at("level").number() : 0.0;
    return anchored(node, [&] { return build_mean_reverting(id, alpha, beta, speed, level); });
  }
  node.at("family").fail("unknown family '" + family +
                         "' (expected constant, local_vol or mean_reverting)");
}

PayoffSpec read_payoff(const Node& node) {
  if (!node.raw().is_object()) node.fail("expected an object");
  const std::string kind = node.at("kind").string();
  const int coordinate =
      node.has("coordinate") ? static_cast<int>(node.at("coordinate").integer(0, kMaxDim - 1)) : 0;
  return anchored(node, [&]() -> PayoffSpec {
    if (kind == "call" || kind == "put") {
      node.expect_object({"kind", "coordinate", "strike"});
      const double strike = node.at("strike").number();
      return kind == "call" ? PayoffSpec::call(strike, coordinate) : PayoffSpec::put(strike, coordinate);
    }
    if (kind == "butterfly") {
      node.expect_object({"kind", "coordinate", "center", "width"});
      return PayoffSpec::butterfly(node.at("center").number(), node.at("width").number(), coordinate);
    }
    if (kind == "table") {
      node.expect_object({"kind", "coordinate", "knots"});
      const Node knots = node.at("knots");
      std::vector<std::pair<double, double>> points;
      for (std::size_t i = 0; i < knots.size(); ++i) {
        const auto xy = knots[i].numbers();
        if (xy.size() != 2) knots[i].fail("knots are [x, y] pairs");
        points.emplace_back(xy[0], xy[1]);
      }
      return PayoffSpec::table(std::move(points), coordinate);
    }
    if (kind == "identity") {
      node.expect_object({"kind", "coordinate"});
      return PayoffSpec::identity(coordinate);
    }
    if (kind == "constant") {
      node.expect_object({"kind", "level"});
      return PayoffSpec::constant(node.at("level").number());
    }
    node.at("kind").fail("unknown payoff kind '" + kind +
                         "' (expected call, put, butterfly, table, identity or constant)");
  });
}

MarketSpec read_market(const Node& node) {
  node.expect_object({"agents", "payoff", "horizon", "x0", "supply", "short_bound"});
  MarketSpec market;
  const Node agents = node.at("agents");
  if (agents.size() == 0) agents.fail("need at least one agent");
  for (std::size_t i = 0; i < agents.size(); ++i)
    market.agents.push_back(read_agent(agents[i], static_cast<AgentId>(i + 1)));
  anchored(agents, [&] {
    validate_agents(market.agents);
    return 0;
  });
  market.payoff = read_payoff(node.at("payoff"));
  market.horizon = node.at("horizon").positive();
  const Node x0 = node.at("x0");
  if (x0.is_number()) {
    market.x0 = StateVector::Constant(1, x0.number());
  } else {
    const auto values = x0.numbers();
    if (values.empty() || values.size() > static_cast<std::size_t>(kMaxDim))
      x0.fail("x0 needs 1 or 2 coordinates");
    market.x0 = StateVector(static_cast<Eigen::Index>(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j) market.x0(static_cast<Eigen::Index>(j)) = values[j];
  }
  if (market.x0.size() != market.dim()) x0.fail("x0 does not match the agents' state dimension");
  if (auto s = node.find("supply")) market.supply = s->number();
  if (auto k = node.find("short_bound")) market.short_bound = k->number();
  anchored(node, [&] {
    market.validate();
    return 0;
  });
  return market;
}

GridSection read_grid(const Node& node, int dim) {
  node.expect_object({"bounds", "nodes", "steps", "width"});
  GridSection g;
  g.nodes.assign(static_cast<std::size_t>(dim), dim == 1 ? 401 : 201);
  if (auto bounds = node.find("bounds")) {
    if (bounds->size() != static_cast<std::size_t>(dim)) bounds->fail("need one [lo, hi] per axis");
    for (std::size_t j = 0; j < bounds->size(); ++j) {
      const auto b = (*bounds)[j].numbers();
      if (b.size() != 2 || !(b[0] < b[1])) (*bounds)[j].fail("expected [lo, hi] with lo < hi");
      g.bounds.emplace_back(b[0], b[1]);
    }
  }
  if (auto nodes = node.find("nodes")) {
    if (nodes->is_array()) {
      if (nodes->size() != static_cast<std::size_t>(dim)) nodes->fail("need one node count per axis");
      for (std::size_t j = 0; j < nodes->size(); ++j)
        g.nodes[j] = static_cast<int>((*nodes)[j].integer(3, 100000));
    } else {
      g.nodes.assign(static_cast<std::size_t>(dim), static_cast<int>(nodes->integer(3, 100000)));
    }
  }
  if (auto steps = node.find("steps")) g.steps = static_cast<int>(steps->integer(1, 10000000));
  if (auto width = node.find("width")) g.width = width->positive();
  return g;
}

SimConfig read_sim(const Node& node, int& export_paths) {
  node.expect_object({"paths", "steps", "seed", "antithetic", "export_paths"});
  SimConfig sim;
  if (auto v = node.find("paths")) sim.paths = static_cast<int>(v->integer(1, 100000000));
  if (auto v = node.find("steps")) sim.steps = static_cast<int>(v->integer(1, 1000000));
  if (auto v = node.find("seed")) sim.seed = v->unsigned_integer();
  if (auto v = node.find("antithetic")) sim.antithetic = v->boolean();
  if (auto v = node.find("export_paths")) export_paths = static_cast<int>(v->integer(0, 100000000));
  return sim;
}

Scheme parse_scheme(const Node& node) {
  const std::string s = node.string();
  if (s == "explicit") return Scheme::explicit_euler;
  if (s == "implicit") return Scheme::implicit_euler;
  node.fail("expected \"explicit\" or \"implicit\"");
}

SolverOptions read_solver(const Node& node) {
  node.expect_object({"scheme", "tie_tolerance", "max_policy_iterations"});
  SolverOptions o{.scheme = Scheme::implicit_euler};
  if (auto v = node.find("scheme")) o.scheme = parse_scheme(*v);
  if (auto v = node.find("tie_tolerance")) o.tie_tolerance = v->number_in(0.0, 1.0, "tie_tolerance");
  if (auto v = node.find("max_policy_iterations"))
    o.max_policy_iterations = static_cast<int>(v->integer(1, 10000));
  return o;
}

VerifySection read_verify(const Node& node, int dim) {
  node.expect_object({"supermartingale", "monte_carlo", "pnl", "pnl_paths", "lattice", "competitors",
                      "competitor_pieces", "se_factor", "tolerance_factor"});
  VerifySection v;
  if (auto b = node.find("supermartingale")) v.supermartingale = b->boolean();
  if (auto b = node.find("monte_carlo")) v.monte_carlo = b->boolean();
  if (auto b = node.find("pnl")) v.pnl = b->boolean();
  if (auto c = node.find("pnl_paths")) v.pnl_paths = static_cast<int>(c->integer(1, 100000000));
  if (auto c = node.find("competitors")) v.competitors = static_cast<int>(c->integer(1, 100000));
  if (auto c = node.find("competitor_pieces"))
    v.competitor_pieces = static_cast<int>(c->integer(1, 100000));
  if (auto f = node.find("se_factor")) v.se_factor = f->positive();
  if (auto f = node.find("tolerance_factor")) v.tolerance_factor = f->positive();
  if (auto lattice = node.find("lattice")) {
    lattice->expect_object({"enabled", "steps", "increments"});
    if (auto b = lattice->find("enabled")) v.lattice.enabled = b->boolean();
    if (auto s = lattice->find("steps"))
      v.lattice.steps = static_cast<int>(s->integer(1, kMaxLatticeSteps));
    if (auto inc = lattice->find("increments")) {
      v.lattice.increments = inc->numbers();
      if (v.lattice.increments.size() != static_cast<std::size_t>(dim))
        inc->fail("need one increment per axis");
      for (std::size_t j = 0; j < v.lattice.increments.size(); ++j)
        if (!(v.lattice.increments[j] > 0.0)) (*inc)[j].fail("increments must be positive");
    }
  }
  return v;
}

}  // namespace

Grid RunConfig::make_grid() const {
  if (grid.bounds.empty())
    return auto_grid(market.agents, market.x0, market.horizon, grid.nodes, grid.steps, grid.width);
  std::vector<Axis> axes;
  for (std::size_t j = 0; j < grid.bounds.size(); ++j)
    axes.push_back({grid.bounds[j].first, grid.bounds[j].second, grid.nodes[j]});
  Grid g(std::move(axes), grid.steps, market.horizon);
  if (!g.contains_strictly(market.x0)) throw InvalidArgument("x0 is not strictly inside the grid bounds");
  return g;
}

SampleLattice RunConfig::sample_lattice() const {
  const Grid g = make_grid();
  SampleLattice lattice;
  lattice.times = {0.0, 0.5 * market.horizon, market.horizon};
  for (const Axis& a : g.axes()) {
    lattice.lo.push_back(a.lo);
    lattice.hi.push_back(a.hi);
    lattice.points.push_back(11);
  }
  return lattice;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  const Document doc(text, source);
  const Node root(doc, doc.root(), "");
  root.expect_object({"schema", "description", "market", "grid", "sim", "solver", "verify", "demo",
                      "output"});
  const Node schema = root.at("schema");
  if (schema.integer(0, 1000000) != kSchemaVersion)
    schema.fail("unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
  if (auto d = root.find("description")) d->string();

  RunConfig cfg;
  cfg.source = source;
  cfg.market = read_market(root.at("market"));
  const int dim = cfg.market.dim();
  if (auto g = root.find("grid")) {
    cfg.grid = read_grid(*g, dim);
  } else {
    cfg.grid.nodes.assign(static_cast<std::size_t>(dim), dim == 1 ? 401 : 201);
  }
  if (auto s = root.find("sim")) cfg.sim = read_sim(*s, cfg.export_paths);
  if (auto s = root.find("solver")) cfg.solver = read_solver(*s);
  if (auto v = root.find("verify")) cfg.verify = read_verify(*v, dim);
  if (cfg.verify.lattice.increments.empty())
    cfg.verify.lattice.increments.assign(static_cast<std::size_t>(dim), 0.1);
  if (auto d = root.find("demo")) {
    d->expect_object({"trade_paths"});
    if (auto t = d->find("trade_paths")) cfg.demo.trade_paths = static_cast<int>(t->integer(1, 100000000));
  }
  if (auto o = root.find("output")) cfg.output = o->string();

  const Node grid_node = root.find("grid").value_or(root);
  anchored(grid_node, [&] {
    cfg.make_grid();
    return 0;
  });
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, 0, "", "cannot open file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path);
}

RunConfig heston_demo_config(const HestonTypeParams& params) {
  RunConfig cfg;
  cfg.source = "<heston-demo>";
  cfg.market = heston_market(params, PayoffSpec::call(1.0), 1.0);
  cfg.grid.nodes = {201, 201};
  cfg.grid.steps = 200;
  cfg.sim.paths = 100000;
  cfg.sim.steps = 200;
  cfg.verify.lattice.increments = {0.1, 0.1};
  return cfg;
}

}  // namespace uveq
