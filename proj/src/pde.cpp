#include "uveq/pde.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

namespace uveq {

const char* to_string(Scheme scheme) {
  return scheme == Scheme::explicit_euler ? "explicit" : "implicit";
}

namespace {

void validate_surface_agents(const std::vector<AgentModel>& agents, const Grid& grid) {
  if (agents.empty()) throw InvalidArgument("at least one agent is required");
  AgentMask seen = 0;
  for (const AgentModel& a : agents) {
    if (a.id < 1 || a.id > kMaxAgents) throw InvalidArgument("agent id out of range");
    if (seen & agent_bit(a.id)) throw InvalidArgument("agent ids must be distinct");
    seen |= agent_bit(a.id);
    if (a.coefficients.dim() != grid.dim())
      throw InvalidArgument("agent state dimension does not match the grid");
  }
}

std::ptrdiff_t signed_count(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

}  // namespace

// ---------------------------------------------------------------------------
// DiscreteGenerator

DiscreteGenerator::DiscreteGenerator(const Grid& grid, const std::vector<AgentModel>& agents,
                                     const PayoffSpec* offset)
    : grid_(&grid), agents_(&agents), stencil_(grid.dim() == 1 ? 3 : 9), homogeneous_(true) {
  for (const AgentModel& a : agents) homogeneous_ = homogeneous_ && a.coefficients.time_homogeneous();

  const std::size_t n = grid.node_count();
  neighbours_.assign(n * stencil_, 0);
  for (std::size_t node = 0; node < n; ++node) {
    const auto idx = grid.unravel(node);
    const auto offset = [&](int d0, int d1) -> std::size_t {
      std::array<int, kMaxDim> k{idx[0] + d0, idx[1] + d1};
      for (int j = 0; j < grid.dim(); ++j)
        if (k[j] < 0 || k[j] >= grid.axis(j).nodes) return node;
      return grid.ravel(k);
    };
    std::size_t* nb = neighbours_.data() + node * stencil_;
    nb[0] = node;
    nb[1] = offset(-1, 0);
    nb[2] = offset(1, 0);
    if (stencil_ == 9) {
      nb[3] = offset(0, -1);
      nb[4] = offset(0, 1);
      nb[5] = offset(-1, -1);
      nb[6] = offset(1, -1);
      nb[7] = offset(-1, 1);
      nb[8] = offset(1, 1);
    }
  }
  weights_.assign(agents.size(), std::vector<double>(n * stencil_, 0.0));
  if (offset) build_increments(*offset);
}

void DiscreteGenerator::build_increments(const PayoffSpec& offset) {
  const Grid& grid = *grid_;
  const std::size_t n = grid.node_count();
  payoff_axis_ = offset.kind() == PayoffKind::constant ? -1 : offset.coordinate();
  increments_.assign(2 * n, 0.0);
  if (payoff_axis_ >= 0) {
    const Axis& axis = grid.axis(payoff_axis_);
    const double h = axis.spacing();
    for (std::size_t node = 0; node < n; ++node) {
      const double s = axis.coordinate(grid.unravel(node)[payoff_axis_]);
      increments_[2 * node] = offset.increment(s, -h);
      increments_[2 * node + 1] = offset.increment(s, h);
    }
  }
  sources_.assign(weights_.size(), std::vector<double>(n, 0.0));
  source_rounding_.assign(weights_.size(), std::vector<double>(n, 0.0));
}

void DiscreteGenerator::update(double t) {
  if (built_ && (homogeneous_ || t == built_time_)) return;
  build(t);
  built_ = true;
  built_time_ = t;
}

void DiscreteGenerator::build(double t) {
  const Grid& grid = *grid_;
  const int d = grid.dim();
  const auto n = grid.node_count();
  double max_rate = 0.0;

  for (std::size_t agent = 0; agent < agents_->size(); ++agent) {
    const CoefficientField& field = (*agents_)[agent].coefficients;
    std::vector<double>& weights = weights_[agent];
#pragma omp parallel for schedule(static) reduction(max : max_rate)
    for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
      const auto node = static_cast<std::size_t>(s);
      const auto idx = grid.unravel(node);
      const StateVector x = grid.point(node);
      const StateVector b = field.drift(t, x);
      const DiffusionMatrix a = field.diffusion_product(t, x);
      double* w = weights.data() + node * stencil_;
      std::fill(w, w + stencil_, 0.0);

      bool interior_all = true;
      for (int j = 0; j < d; ++j) {
        const double h = grid.axis(j).spacing();
        const int minus = 1 + 2 * j;
        const int plus = 2 + 2 * j;
        const int last = grid.axis(j).nodes - 1;
        if (idx[j] > 0 && idx[j] < last) {
          const double c2 = 0.5 * a(j, j) / (h * h);
          w[minus] += c2;
          w[plus] += c2;
          if (a(j, j) >= std::abs(b(j)) * h) {
            w[minus] -= b(j) / (2.0 * h);
            w[plus] += b(j) / (2.0 * h);
          } else if (b(j) > 0.0) {
            w[plus] += b(j) / h;
          } else {
            w[minus] -= b(j) / h;
          }
        } else {
          interior_all = false;
          if (idx[j] == 0)
            w[plus] += b(j) / h;
          else
            w[minus] -= b(j) / h;
        }
      }
      if (d == 2 && interior_all && a(0, 1) != 0.0) {
        const double c = a(0, 1) / (4.0 * grid.axis(0).spacing() * grid.axis(1).spacing());
        w[5] += c;
        w[8] += c;
        w[6] -= c;
        w[7] -= c;
      }
      double rate = 0.0;
      for (int k = 1; k < stencil_; ++k) rate += std::abs(w[k]);
      w[0] = 0.0;
      for (int k = 1; k < stencil_; ++k) w[0] -= w[k];
      max_rate = std::max(max_rate, rate);
      if (payoff_axis_ >= 0) {
        // G_i[f] from the one-sided increments of f along its axis; the
        // curvature part vanishes exactly where f is linear.
        const int j = payoff_axis_;
        const double h = grid.axis(j).spacing();
        const double down = increments_[2 * node];
        const double up = increments_[2 * node + 1];
        double curvature = 0.0, transport = 0.0;
        if (idx[j] > 0 && idx[j] < grid.axis(j).nodes - 1) {
          curvature = 0.5 * a(j, j) / (h * h) * (up + down);
          if (a(j, j) >= std::abs(b(j)) * h)
            transport = b(j) * (up - down) / (2.0 * h);
          else
            transport = b(j) > 0.0 ? b(j) * up / h : -b(j) * down / h;
        } else {
          transport = idx[j] == 0 ? b(j) * up / h : -b(j) * down / h;
        }
        sources_[agent][node] = curvature + transport;
        source_rounding_[agent][node] = std::abs(curvature) + std::abs(transport);
      }
    }
  }
  max_rate_ = max_rate;
}

double DiscreteGenerator::apply(int agent, std::size_t node, std::span<const double> values) const {
  const double* w = weights_[agent].data() + node * stencil_;
  const std::size_t* nb = neighbours_.data() + node * stencil_;
  const double centre = values[node];
  double g = 0.0;
  for (int k = 1; k < stencil_; ++k) g += w[k] * (values[nb[k]] - centre);
  return sources_.empty() ? g : g + sources_[agent][node];
}

double DiscreteGenerator::rounding_scale(int agent, std::size_t node, std::span<const double> values) const {
  const double* w = weights_[agent].data() + node * stencil_;
  const std::size_t* nb = neighbours_.data() + node * stencil_;
  const double centre = std::abs(values[node]);
  double s = 0.0;
  for (int k = 1; k < stencil_; ++k) s += std::abs(w[k]) * (std::abs(values[nb[k]]) + centre);
  return sources_.empty() ? s : s + source_rounding_[agent][node];
}

namespace {

constexpr double kRoundingFactor = 16.0;

struct NodeArgmax {
  AgentMask mask = 0;
  int representative = 0;  // position in the agent list
  double best = 0.0;
};

// Agents are scanned in id order so the representative is the smallest id.
NodeArgmax node_argmax(const DiscreteGenerator& gen, const std::vector<AgentModel>& agents,
                       const std::vector<int>& order, std::size_t node,
                       std::span<const double> values, double tie) {
  std::array<double, kMaxAgents> g{};
  double best = -std::numeric_limits<double>::infinity();
  double magnitude = 0.0;
  double rounding = 0.0;
  for (int i : order) {
    g[i] = gen.apply(i, node, values);
    best = std::max(best, g[i]);
    magnitude = std::max(magnitude, std::abs(g[i]));
    rounding = std::max(rounding, gen.rounding_scale(i, node, values));
  }
  const double threshold =
      best - (tie * magnitude + kRoundingFactor * std::numeric_limits<double>::epsilon() * rounding);
  NodeArgmax out;
  out.best = best;
  out.representative = -1;
  for (int i : order) {
    if (g[i] >= threshold) {
      out.mask |= agent_bit(agents[i].id);
      if (out.representative < 0) out.representative = i;
    }
  }
  return out;
}

std::vector<int> id_order(const std::vector<AgentModel>& agents) {
  std::vector<int> order(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return agents[a].id < agents[b].id; });
  return order;
}

}  // namespace

// ---------------------------------------------------------------------------
// ValueSurface

ValueSurface::ValueSurface(Grid grid, std::vector<AgentModel> agents, Scheme scheme,
                           PayoffSpec payoff, std::vector<double> excess)
    : grid_(std::move(grid)),
      agents_(std::move(agents)),
      scheme_(scheme),
      payoff_(std::move(payoff)),
      excess_(std::move(excess)) {
  validate_surface_agents(agents_, grid_);
  const std::size_t n = grid_.node_count();
  if (excess_.size() != n * static_cast<std::size_t>(grid_.steps() + 1))
    throw InvalidArgument("value array does not match the grid");
  if (payoff_.kind() != PayoffKind::constant && payoff_.coordinate() >= grid_.dim())
    throw InvalidArgument("payoff coordinate exceeds the grid dimension");
  std::vector<double> terminal(n);
  for (std::size_t node = 0; node < n; ++node) terminal[node] = payoff_.evaluate(grid_.point(node));
  values_.resize(excess_.size());
  for (std::size_t i = 0; i < excess_.size(); ++i) values_[i] = excess_[i] + terminal[i % n];
}

int ValueSurface::generator_layer(int m) const {
  if (m >= grid_.steps()) return grid_.steps();
  return scheme_ == Scheme::implicit_euler ? m : m + 1;
}

AgentId ValueSurface::representative(int m, std::size_t node) const {
  const AgentMask mask = maximizers(m, node);
  return mask == 0 ? 0 : std::countr_zero(mask) + 1;
}

StateVector ValueSurface::gradient(int m, std::size_t node) const {
  const auto idx = grid_.unravel(node);
  const auto v = layer(m);
  StateVector g(dim());
  for (int j = 0; j < dim(); ++j) {
    const double h = grid_.axis(j).spacing();
    const std::size_t s = grid_.stride(j);
    const int last = grid_.axis(j).nodes - 1;
    if (idx[j] == 0)
      g(j) = (-3.0 * v[node] + 4.0 * v[node + s] - v[node + 2 * s]) / (2.0 * h);
    else if (idx[j] == last)
      g(j) = (3.0 * v[node] - 4.0 * v[node - s] + v[node - 2 * s]) / (2.0 * h);
    else
      g(j) = (v[node + s] - v[node - s]) / (2.0 * h);
  }
  return g;
}

DiffusionMatrix ValueSurface::hessian(int m, std::size_t node) const {
  const auto idx = grid_.unravel(node);
  const auto v = layer(m);
  DiffusionMatrix hess = DiffusionMatrix::Zero(dim(), dim());
  const auto interior = [&](int j) { return idx[j] > 0 && idx[j] < grid_.axis(j).nodes - 1; };
  for (int j = 0; j < dim(); ++j) {
    if (!interior(j)) continue;
    const double h = grid_.axis(j).spacing();
    const std::size_t s = grid_.stride(j);
    hess(j, j) = (v[node + s] - 2.0 * v[node] + v[node - s]) / (h * h);
  }
  if (dim() == 2 && interior(0) && interior(1)) {
    const std::size_t s1 = grid_.stride(1);
    const double cross = (v[node + 1 + s1] - v[node + 1 - s1] - v[node - 1 + s1] + v[node - 1 - s1]) /
                         (4.0 * grid_.axis(0).spacing() * grid_.axis(1).spacing());
    hess(0, 1) = hess(1, 0) = cross;
  }
  return hess;
}

double ValueSurface::value_at(double t, const StateVector& x) const {
  if (x.size() != dim()) throw InvalidArgument("query dimension does not match the surface");
  const double dt = grid_.dt();
  const double tau = std::clamp(t, 0.0, grid_.horizon()) / dt;
  const int m0 = std::min(static_cast<int>(std::floor(tau)), grid_.steps() - 1);
  const double wt = std::clamp(tau - m0, 0.0, 1.0);

  std::array<int, kMaxDim> base{0, 0};
  std::array<double, kMaxDim> frac{0.0, 0.0};
  for (int j = 0; j < dim(); ++j) {
    const Axis& a = grid_.axis(j);
    const double u = std::clamp((x(j) - a.lo) / a.spacing(), 0.0, static_cast<double>(a.nodes - 1));
    base[j] = std::min(static_cast<int>(std::floor(u)), a.nodes - 2);
    frac[j] = u - base[j];
  }
  const auto spatial = [&](int m) {
    if (dim() == 1) {
      const std::size_t n = grid_.ravel(base);
      return (1.0 - frac[0]) * value(m, n) + frac[0] * value(m, n + 1);
    }
    const std::size_t n = grid_.ravel(base);
    const std::size_t s1 = grid_.stride(1);
    const double lower = (1.0 - frac[0]) * value(m, n) + frac[0] * value(m, n + 1);
    const double upper = (1.0 - frac[0]) * value(m, n + s1) + frac[0] * value(m, n + s1 + 1);
    return (1.0 - frac[1]) * lower + frac[1] * upper;
  };
  if (wt == 0.0) return spatial(m0);
  if (wt == 1.0) return spatial(m0 + 1);
  return (1.0 - wt) * spatial(m0) + wt * spatial(m0 + 1);
}

ValueSurface ValueSurface::from_excess(Grid grid, std::vector<AgentModel> agents, Scheme scheme,
                                       PayoffSpec payoff, std::vector<double> excess,
                                       double linear_residual, double tie_tolerance) {
  ValueSurface surface(std::move(grid), std::move(agents), scheme, std::move(payoff),
                       std::move(excess));
  surface.linear_residual_ = linear_residual;
  surface.maximizers_ = argmax_field(surface, surface.agents_, tie_tolerance);
  surface.drifts_.reserve(surface.agents_.size());
  for (const AgentModel& a : surface.agents_) surface.drifts_.push_back(drift_field(surface, a));

  // Rounding floor of mu = (v^{m+1} - v^m)/dt + G[v]: a few ulps of |v| times
  // the operator magnitude.
  const bool homogeneous =
      std::all_of(surface.agents_.begin(), surface.agents_.end(),
                  [](const AgentModel& a) { return a.coefficients.time_homogeneous(); });
  DiscreteGenerator gen(surface.grid_, surface.agents_);
  double rate = 0.0;
  for (int m = 0; m <= surface.grid_.steps(); ++m) {
    gen.update(surface.grid_.time(m));
    rate = std::max(rate, gen.max_rate());
    if (homogeneous) break;
  }
  double vmax = 1.0;
  for (double v : surface.values_) vmax = std::max(vmax, std::abs(v));
  const double floor = 16.0 * std::numeric_limits<double>::epsilon() * vmax *
                       (1.0 / surface.grid_.dt() + 2.0 * rate);
  surface.residual_tolerance_ = std::max(floor, linear_residual);
  return surface;
}

ValueSurface ValueSurface::from_fields(Grid grid, std::vector<AgentModel> agents, Scheme scheme,
                                       PayoffSpec payoff, std::vector<double> excess,
                                       std::vector<AgentMask> maximizers,
                                       std::vector<std::vector<double>> drifts,
                                       double residual_tolerance, double linear_residual) {
  ValueSurface surface(std::move(grid), std::move(agents), scheme, std::move(payoff),
                       std::move(excess));
  if (maximizers.size() != surface.values_.size() || drifts.size() != surface.agents_.size())
    throw InvalidArgument("surface fields do not match the grid");
  for (const auto& d : drifts)
    if (d.size() != surface.values_.size()) throw InvalidArgument("drift field does not match the grid");
  surface.maximizers_ = std::move(maximizers);
  surface.drifts_ = std::move(drifts);
  surface.residual_tolerance_ = residual_tolerance;
  surface.linear_residual_ = linear_residual;
  return surface;
}

// ---------------------------------------------------------------------------
// Fields

std::vector<AgentMask> argmax_field(const ValueSurface& surface,
                                    const std::vector<AgentModel>& agents, double tie_tolerance) {
  const Grid& grid = surface.grid();
  validate_surface_agents(agents, grid);
  DiscreteGenerator gen(grid, agents, &surface.payoff());
  const auto order = id_order(agents);
  const std::size_t n = grid.node_count();
  std::vector<AgentMask> masks(n * static_cast<std::size_t>(grid.steps() + 1), 0);
  for (int m = 0; m <= grid.steps(); ++m) {
    const int source = surface.generator_layer(m);
    gen.update(grid.time(source));
    const auto values = surface.excess_layer(source);
    AgentMask* out = masks.data() + static_cast<std::size_t>(m) * n;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
      const auto node = static_cast<std::size_t>(s);
      out[node] = node_argmax(gen, agents, order, node, values, tie_tolerance).mask;
    }
  }
  return masks;
}

std::vector<double> drift_field(const ValueSurface& surface, const AgentModel& agent) {
  const Grid& grid = surface.grid();
  const std::vector<AgentModel> single{agent};
  validate_surface_agents(single, grid);
  DiscreteGenerator gen(grid, single, &surface.payoff());
  const std::size_t n = grid.node_count();
  const double dt = grid.dt();
  // Layer M carries no drift; it is left at zero.
  std::vector<double> mu(n * static_cast<std::size_t>(grid.steps() + 1), 0.0);
  for (int m = 0; m < grid.steps(); ++m) {
    const int source = surface.generator_layer(m);
    gen.update(grid.time(source));
    const auto now = surface.excess_layer(m);
    const auto next = surface.excess_layer(m + 1);
    const auto values = surface.excess_layer(source);
    double* out = mu.data() + static_cast<std::size_t>(m) * n;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
      const auto node = static_cast<std::size_t>(s);
      out[node] = (next[node] - now[node]) / dt + gen.apply(0, node, values);
    }
  }
  return mu;
}

int required_explicit_steps(const std::vector<AgentModel>& agents, const Grid& grid) {
  DiscreteGenerator gen(grid, agents);
  double rate = 0.0;
  for (int m = 0; m <= grid.steps(); ++m) {
    gen.update(grid.time(m));
    rate = std::max(rate, gen.max_rate());
  }
  return std::max(1, static_cast<int>(std::ceil(grid.horizon() * rate * (1.0 - 1e-12))));
}

// ---------------------------------------------------------------------------
// Solvers

namespace {

using RowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Sparse matrix I - dt W_policy with a fixed pattern; values are rewritten
// for each policy.
class PolicyMatrix {
 public:
  PolicyMatrix(const Grid& grid, const DiscreteGenerator& gen) : gen_(&gen) {
    const std::size_t n = grid.node_count();
    const int K = gen.stencil_size();
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n * K);
    for (std::size_t node = 0; node < n; ++node) {
      const auto nb = gen.neighbours(node);
      triplets.emplace_back(static_cast<int>(node), static_cast<int>(node), 1.0);
      for (int k = 1; k < K; ++k)
        if (nb[k] != node)
          triplets.emplace_back(static_cast<int>(node), static_cast<int>(nb[k]), 0.0);
    }
    matrix_.resize(static_cast<int>(n), static_cast<int>(n));
    matrix_.setFromTriplets(triplets.begin(), triplets.end());
    matrix_.makeCompressed();

    position_.assign(n * K, -1);
    for (std::size_t node = 0; node < n; ++node) {
      const auto nb = gen.neighbours(node);
      for (RowMatrix::InnerIterator it(matrix_, static_cast<int>(node)); it; ++it) {
        const auto col = static_cast<std::size_t>(it.col());
        const std::ptrdiff_t pos = &it.valueRef() - matrix_.valuePtr();
        for (int k = 0; k < K; ++k)
          if (nb[k] == col && (k == 0 || col != node)) position_[node * K + k] = pos;
      }
    }
  }

  void assign(const std::vector<int>& policy, double dt) {
    const std::size_t n = policy.size();
    const int K = gen_->stencil_size();
    double* values = matrix_.valuePtr();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
      const auto node = static_cast<std::size_t>(s);
      const auto w = gen_->weights(policy[node], node);
      const auto nb = gen_->neighbours(node);
      double diag = 1.0;
      for (int k = 1; k < K; ++k) {
        if (nb[k] == node) continue;
        diag += dt * w[k];
      }
      // Row entries may be shared by several stencil slots only when they
      // map to the diagonal, which is handled separately.
      for (RowMatrix::InnerIterator it(matrix_, static_cast<int>(node)); it; ++it) it.valueRef() = 0.0;
      for (int k = 1; k < K; ++k) {
        if (nb[k] == node) continue;
        values[position_[node * K + k]] -= dt * w[k];
      }
      values[position_[node * K]] = diag;
    }
  }

  const RowMatrix& matrix() const { return matrix_; }

 private:
  const DiscreteGenerator* gen_;
  RowMatrix matrix_;
  std::vector<std::ptrdiff_t> position_;
};

// Direct LU with diagonal pivots. The implicit matrix is an M-matrix, so the
// factors carry no cancellation and tiny tail values stay accurate
// componentwise. The factorization is reused while the matrix is unchanged.
class LinearSolver {
 public:
  LinearSolver() { lu_.setPivotThreshold(0.0); }

  Eigen::VectorXd solve(const RowMatrix& a, const Eigen::VectorXd& rhs) {
    const Eigen::Index nnz = a.nonZeros();
    if (factored_.size() != nnz ||
        !std::equal(a.valuePtr(), a.valuePtr() + nnz, factored_.data())) {
      column_ = a;
      if (!analysed_) {
        lu_.analyzePattern(column_);
        analysed_ = true;
      }
      lu_.factorize(column_);
      if (lu_.info() != Eigen::Success) throw NumericalError("sparse LU factorization failed");
      factored_ = Eigen::Map<const Eigen::VectorXd>(a.valuePtr(), nnz);
    }
    Eigen::VectorXd x = lu_.solve(rhs);
    if (lu_.info() != Eigen::Success) throw NumericalError("sparse LU solve failed");
    return x;
  }

 private:
  bool analysed_ = false;
  Eigen::VectorXd factored_;
  Eigen::SparseMatrix<double> column_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

void representatives(const DiscreteGenerator& gen, const std::vector<AgentModel>& agents,
                     const std::vector<int>& order, std::span<const double> values, double tie,
                     std::vector<int>& out) {
  const std::size_t n = out.size();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
    const auto node = static_cast<std::size_t>(s);
    out[node] = node_argmax(gen, agents, order, node, values, tie).representative;
  }
}

}  // namespace

ValueSurface solve_equilibrium(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                               const Grid& grid, const SolverOptions& options) {
  validate_surface_agents(agents, grid);
  if (payoff.kind() != PayoffKind::constant && payoff.coordinate() >= grid.dim())
    throw InvalidArgument("payoff coordinate exceeds the grid dimension");

  const std::size_t n = grid.node_count();
  const int M = grid.steps();
  const double dt = grid.dt();
  // Excess over the payoff; zero at maturity.
  std::vector<double> values(n * static_cast<std::size_t>(M + 1), 0.0);

  DiscreteGenerator gen(grid, agents, &payoff);
  const auto order = id_order(agents);
  const auto layer = [&](int m) {
    return std::span<double>(values.data() + static_cast<std::size_t>(m) * n, n);
  };

  double linear_residual = 0.0;

  if (options.scheme == Scheme::explicit_euler) {
    const int required = required_explicit_steps(agents, grid);
    if (M < required) {
      std::ostringstream msg;
      msg << "explicit scheme violates the CFL bound: " << M << " time steps given, at least "
          << required << " required (or use the implicit scheme)";
      throw CflViolation(msg.str(), required);
    }
    for (int m = M - 1; m >= 0; --m) {
      gen.update(grid.time(m + 1));
      const auto next = layer(m + 1);
      const auto now = layer(m);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
        const auto node = static_cast<std::size_t>(s);
        double best = -std::numeric_limits<double>::infinity();
        for (int i : order) best = std::max(best, gen.apply(i, node, next));
        now[node] = next[node] + dt * best;
      }
    }
  } else {
    gen.update(grid.time(M));
    std::vector<int> policy(n, 0);
    representatives(gen, agents, order, layer(M), options.tie_tolerance, policy);
    std::vector<int> updated(n, 0);
    LinearSolver solver;

    PolicyMatrix system(grid, gen);
    for (int m = M - 1; m >= 0; --m) {
      gen.update(grid.time(m));
      const auto next = layer(m + 1);
      const auto now = layer(m);
      Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
      Eigen::VectorXd delta;
      std::vector<double> previous;
      bool converged = false;

      for (int iter = 0; iter < options.max_policy_iterations; ++iter) {
        system.assign(policy, dt);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t s = 0; s < signed_count(n); ++s) {
          const auto node = static_cast<std::size_t>(s);
          rhs(s) = dt * gen.apply(policy[node], node, next);
        }
        delta = solver.solve(system.matrix(), rhs);
        for (std::size_t node = 0; node < n; ++node)
          now[node] = next[node] + delta(static_cast<Eigen::Index>(node));

        representatives(gen, agents, order, now, options.tie_tolerance, updated);
        if (updated == policy) {
          converged = true;
          break;
        }
        if (!previous.empty()) {
          double change = 0.0;
          for (std::size_t node = 0; node < n; ++node)
            change = std::max(change, std::abs(now[node] - previous[node]));
          if (change < options.policy_value_tolerance) {
            converged = true;
            break;
          }
        }
        previous.assign(now.begin(), now.end());
        policy.swap(updated);
      }
      if (!converged) {
        std::ostringstream msg;
        msg << "policy iteration did not converge within " << options.max_policy_iterations
            << " iterations at time layer " << m;
        throw NumericalError(msg.str());
      }
      const Eigen::VectorXd residual = rhs - system.matrix() * delta;
      linear_residual = std::max(linear_residual, residual.lpNorm<Eigen::Infinity>() / dt);
    }
  }

  return ValueSurface::from_excess(grid, agents, options.scheme, payoff, std::move(values),
                                   linear_residual, options.tie_tolerance);
}

ValueSurface solve_fundamental(const AgentModel& agent, const PayoffSpec& payoff, const Grid& grid,
                               const SolverOptions& options) {
  return solve_equilibrium(std::vector<AgentModel>{agent}, payoff, grid, options);
}

double estimate_scheme_tolerance(const std::vector<AgentModel>& agents, const PayoffSpec& payoff,
                                 const Grid& grid, const StateVector& x0, const ValueSurface& fine,
                                 const SolverOptions& options) {
  const Grid coarse_grid = grid.coarsened();
  const ValueSurface coarse = solve_equilibrium(agents, payoff, coarse_grid, options);
  const std::size_t centre = coarse_grid.nearest_node(x0);
  const auto idx = coarse_grid.unravel(centre);
  double gap = 0.0;
  for (std::size_t node = 0; node < coarse_grid.node_count(); ++node) {
    const auto k = coarse_grid.unravel(node);
    bool near = true;
    for (int j = 0; j < grid.dim(); ++j) near = near && std::abs(k[j] - idx[j]) <= 2;
    if (!near) continue;
    gap = std::max(gap, std::abs(fine.value_at(0.0, coarse_grid.point(node)) - coarse.value(0, node)));
  }
  return std::max(gap, 1e-12 * (1.0 + std::abs(fine.value_at(0.0, x0))));
}

}  // namespace uveq
