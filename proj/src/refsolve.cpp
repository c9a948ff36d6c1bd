#include "dvrsfbf/refsolve.hpp"

#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/io.hpp"
#include "dvrsfbf/solver.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <sstream>

namespace dvrsfbf {

double fixed_point_residual(const GameInstance& game, const CommGraph& graph, const State& x, double alpha) {
  State v = x;
  v.data() -= alpha * apply_V(game, graph, x).data();
  resolvent_T_inplace(game, StepConfig::uniform(game.num_players(), alpha), v);
  return (x.data() - v.data()).norm();
}

void fbf_step(const GameInstance& game, const CommGraph& graph, const StepConfig& step,
              const Eigen::VectorXd& phi_inv, State& x) {
  const State vx = apply_V(game, graph, x);
  State z = x;
  z.data().array() -= phi_inv.array() * vx.data().array();
  resolvent_T_inplace(game, step, z);
  const State vz = apply_V(game, graph, z);
  x.data() = z.data();
  x.data().array() -= phi_inv.array() * (vz.data() - vx.data()).array();
}

std::vector<State> deterministic_fbf(const GameInstance& game, const CommGraph& graph, const StepConfig& step,
                                     int iterations, std::optional<State> x0) {
  const Eigen::VectorXd phi_inv = step.inverse_metric(game);
  State x = x0 ? *x0 : initial_state(game);
  std::vector<State> out{x};
  for (int k = 0; k < iterations; ++k) {
    fbf_step(game, graph, step, phi_inv, x);
    out.push_back(x);
  }
  return out;
}

ReferenceSolution solve_reference(const GameInstance& game, const CommGraph& graph, double tol, long long budget) {
  const GameAnalysis analysis = analyze(game);
  const double alpha = 0.9 / lipschitz_V(analysis, graph, game);
  const StepConfig step = StepConfig::uniform(game.num_players(), alpha);
  const Eigen::VectorXd phi_inv = step.inverse_metric(game);
  const bool averaging = !analysis.is_strongly_monotone;

  State x = initial_state(game);
  State avg = State::zeros(game);
  long long averaged = 0;
  double best = std::numeric_limits<double>::infinity();
  constexpr int kCheckEvery = 50;

  for (long long it = 1; it <= budget; ++it) {
    fbf_step(game, graph, step, phi_inv, x);
    if (!x.all_finite()) throw NumericalError("solve_reference: iterates diverged", -1, static_cast<int>(it));
    if (averaging) {
      ++averaged;
      avg.data() += (x.data() - avg.data()) / static_cast<double>(averaged);
    }
    if (it % kCheckEvery != 0) continue;
    const double r = fixed_point_residual(game, graph, x, alpha);
    best = std::min(best, r);
    if (r <= tol) return {x, r, "fbf", it, false, {}};
    if (averaging) {
      const double ra = fixed_point_residual(game, graph, avg, alpha);
      best = std::min(best, ra);
      if (ra <= tol) return {avg, ra, "fbf-averaged", it, false, {}};
    }
  }
  throw BudgetExceeded("solve_reference: residual " + std::to_string(best) + " above tolerance after " +
                           std::to_string(budget) + " iterations",
                       best);
}

State state_from_primal_dual(const GameInstance& game, const CommGraph& graph, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& lambda) {
  const int N = game.num_players();
  const int m = game.num_markets();
  State x = State::zeros(game);
  x.u() = u;
  for (int i = 0; i < N; ++i) x.y().segment(i * m, m) = lambda;

  // Slack split: (Lbar p)_i = c_i - mean(c), c_i = b_i - A_i u_i.
  Eigen::MatrixXd c(m, N);
  for (int i = 0; i < N; ++i) {
    c.col(i) = game.local_capacity(i);
    const Player& pl = game.players[i];
    for (int k = 0; k < pl.dim(); ++k) c(pl.markets[k], i) -= u(game.offset(i) + k);
  }
  const Eigen::VectorXd cbar = c.rowwise().mean();
  c.colwise() -= cbar;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(graph.L);
  Eigen::VectorXd inv = eig.eigenvalues();
  for (Eigen::Index k = 0; k < inv.size(); ++k) inv(k) = inv(k) > 1e-10 ? 1.0 / inv(k) : 0.0;
  const Eigen::MatrixXd Lpinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::MatrixXd P = Lpinv * c.transpose();  // N x m
  for (int i = 0; i < N; ++i) x.p().segment(i * m, m) = P.row(i).transpose();
  return x;
}

ReferenceSolution active_set_enumeration(const GameInstance& game, const CommGraph& graph, double tol) {
  const int d = game.dim();
  const int m = game.num_markets();
  if (d + m > 20) throw ConfigError("active_set_enumeration: d + m must be <= 20");
  const GameAnalysis an = analyze(game);
  const Eigen::MatrixXd& M = an.affine_matrix;
  const Eigen::VectorXd& mv = an.affine_offset;
  const Eigen::VectorXd theta = game.box_upper();
  const double check = std::max(1e-9, 100.0 * tol);

  long long patterns = 1;
  for (int c = 0; c < d; ++c) patterns *= 3;
  patterns <<= m;

  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> found;
  std::vector<int> box_state(d);  // 0 free, 1 at 0, 2 at theta
  std::vector<int> free_idx, row_idx;
  for (long long pat = 0; pat < patterns; ++pat) {
    long long code = pat;
    for (int c = 0; c < d; ++c) {
      box_state[c] = static_cast<int>(code % 3);
      code /= 3;
    }
    const long long rows_mask = code;
    free_idx.clear();
    row_idx.clear();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    for (int c = 0; c < d; ++c) {
      if (box_state[c] == 0) free_idx.push_back(c);
      else if (box_state[c] == 2) u(c) = theta(c);
    }
    for (int j = 0; j < m; ++j)
      if (rows_mask >> j & 1) row_idx.push_back(j);

    const int nf = static_cast<int>(free_idx.size());
    const int na = static_cast<int>(row_idx.size());
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    if (nf + na > 0) {
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nf + na, nf + na);
      Eigen::VectorXd rhs(nf + na);
      for (int a = 0; a < nf; ++a) {
        const int c = free_idx[a];
        for (int b = 0; b < nf; ++b) K(a, b) = M(c, free_idx[b]);
        rhs(a) = -(mv(c) + M.row(c).dot(u));  // u holds fixed coordinates only
        for (int r = 0; r < na; ++r)
          if (game.column_market(c) == row_idx[r]) K(a, nf + r) = 1.0;
      }
      for (int r = 0; r < na; ++r) {
        const int j = row_idx[r];
        double fixed = 0.0;
        for (int c = 0; c < d; ++c)
          if (game.column_market(c) == j) {
            if (box_state[c] == 0) {
              const auto it = std::find(free_idx.begin(), free_idx.end(), c);
              K(nf + r, it - free_idx.begin()) = 1.0;
            } else {
              fixed += u(c);
            }
          }
        rhs(nf + r) = game.capacity(j) - fixed;
      }
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd sol = lu.solve(rhs);
      for (int a = 0; a < nf; ++a) u(free_idx[a]) = sol(a);
      for (int r = 0; r < na; ++r) lambda(row_idx[r]) = sol(nf + r);
    }

    bool ok = (lambda.array() >= -check).all();
    for (int c = 0; ok && c < d; ++c) ok = u(c) >= -check && u(c) <= theta(c) + check;
    const Eigen::VectorXd supply = game.coupling_matrix() * u;
    for (int j = 0; ok && j < m; ++j) ok = supply(j) <= game.capacity(j) + check;
    if (!ok) continue;
    const Eigen::VectorXd grad = M * u + mv;
    for (int c = 0; ok && c < d; ++c) {
      const double g = grad(c) + lambda(game.column_market(c));
      if (box_state[c] == 0) ok = std::abs(g) <= check * (1.0 + grad.cwiseAbs().maxCoeff());
      else if (box_state[c] == 1) ok = g >= -check;
      else ok = g <= check;
    }
    if (!ok) continue;
    bool duplicate = false;
    for (const auto& f : found) duplicate = duplicate || (f.first - u).norm() <= 1e-8;
    if (!duplicate) found.emplace_back(u.cwiseMax(0.0).cwiseMin(theta), lambda.cwiseMax(0.0));
  }
  if (found.empty()) throw NumericalError("active_set_enumeration: no consistent activity pattern");

  ReferenceSolution out;
  out.method = "active-set";
  out.iterations = patterns;
  out.x = state_from_primal_dual(game, graph, found.front().first, found.front().second);
  out.residual = fixed_point_residual(game, graph, out.x, 0.9 / lipschitz_V(an, graph, game));
  out.nonunique = found.size() > 1;
  if (out.nonunique)
    for (const auto& f : found) out.alternatives.push_back(state_from_primal_dual(game, graph, f.first, f.second));
  return out;
}

std::uint64_t problem_hash(const GameInstance& game, const CommGraph& graph) {
  std::ostringstream os;
  os << instance_to_json(game).dump();
  write_edge_list(os, graph);
  return fnv1a64(os.str());
}

std::filesystem::path ReferenceCache::path_for(std::uint64_t key_hash, double tol) const {
  char name[96];
  std::snprintf(name, sizeof(name), "ref-v1-%016llx-%.0e.json", static_cast<unsigned long long>(key_hash), tol);
  return dir_ / name;
}

std::optional<ReferenceSolution> ReferenceCache::load(std::uint64_t key_hash, double tol) const {
  std::ifstream in(path_for(key_hash, tol));
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (j.value("format", "") != "dvrsfbf-reference" || j.value("version", 0) != 1) return std::nullopt;
  ReferenceSolution sol;
  const auto data = j.at("state").get<std::vector<double>>();
  sol.x = State(j.at("primal_dim").get<int>(), j.at("dual_dim").get<int>());
  if (static_cast<std::size_t>(sol.x.size()) != data.size()) return std::nullopt;
  sol.x.data() = Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
  sol.residual = j.at("residual").get<double>();
  sol.method = j.at("method").get<std::string>();
  sol.iterations = j.at("iterations").get<long long>();
  return sol;
}

void ReferenceCache::store(std::uint64_t key_hash, double tol, const ReferenceSolution& sol) const {
  std::filesystem::create_directories(dir_);
  nlohmann::json j;
  j["format"] = "dvrsfbf-reference";
  j["version"] = 1;
  j["tol"] = tol;
  j["primal_dim"] = sol.x.primal_dim();
  j["dual_dim"] = sol.x.dual_dim();
  j["state"] = std::vector<double>(sol.x.data().data(), sol.x.data().data() + sol.x.size());
  j["residual"] = sol.residual;
  j["method"] = sol.method;
  j["iterations"] = sol.iterations;
  const auto path = path_for(key_hash, tol);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(1) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

ReferenceSolution ReferenceCache::solve(const GameInstance& game, const CommGraph& graph, double tol) const {
  const std::uint64_t key = problem_hash(game, graph);
  if (auto hit = load(key, tol)) return *hit;
  ReferenceSolution sol = solve_reference(game, graph, tol);
  store(key, tol, sol);
  return sol;
}

}  // namespace dvrsfbf
