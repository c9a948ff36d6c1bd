#include "dvrsfbf/operators.hpp"

#include "dvrsfbf/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dvrsfbf {

StepConfig StepConfig::uniform(int num_agents, double alpha) {
  StepConfig s;
  s.gamma = Eigen::VectorXd::Constant(num_agents, alpha);
  s.sigma = s.gamma;
  s.tau = s.gamma;
  return s;
}

double StepConfig::alpha() const {
  return std::max({gamma.maxCoeff(), sigma.maxCoeff(), tau.maxCoeff()});
}

void StepConfig::validate(int num_agents) const {
  if (gamma.size() != num_agents || sigma.size() != num_agents || tau.size() != num_agents)
    throw ConfigError("step sizes must have one entry per agent");
  auto positive = [](const Eigen::VectorXd& v) { return (v.array() > 0.0).all() && v.allFinite(); };
  if (!positive(gamma) || !positive(sigma) || !positive(tau)) throw ConfigError("step sizes must be positive");
}

Eigen::VectorXd StepConfig::inverse_metric(const GameInstance& game) const {
  validate(game.num_players());
  const int d = game.dim();
  const int m = game.num_markets();
  const int N = game.num_players();
  Eigen::VectorXd out(d + 2 * N * m);
  for (int c = 0; c < d; ++c) out(c) = gamma(game.column_player(c));
  for (int i = 0; i < N; ++i) {
    out.segment(d + i * m, m).setConstant(sigma(i));
    out.segment(d + N * m + i * m, m).setConstant(tau(i));
  }
  return out;
}

double phi_norm_squared(const Eigen::VectorXd& phi_inv, const Eigen::VectorXd& v) {
  return (v.array().square() / phi_inv.array()).sum();
}

void apply_tilde_V_into(const GameInstance& game, const CommGraph& graph, const State& x, const SlopeDraw& draw,
                        State& out) {
  const int d = game.dim();
  const int N = game.num_players();
  const int m = game.num_markets();
  if (x.primal_dim() != d || x.dual_dim() != N * m || graph.size() != N)
    throw ConfigError("apply_V: dimension mismatch");
  if (out.primal_dim() != d || out.dual_dim() != N * m) out = State(d, N * m);

  auto y = x.y();
  auto p = x.p();

  // u-block: F~(u) + A' y, where (A'y) for column (i, k) reads y_i at market k.
  pseudogradient_into(game, x.u(), draw, out.u());
  for (int c = 0; c < d; ++c) out.u()(c) += y(game.column_player(c) * m + game.column_market(c));

  // p-block: Lbar y.
  graph.apply_tensorized(y, m, out.p());

  // y-block: b_i + Lbar(y - p) - A_i u_i.
  auto oy = out.y();
  const Eigen::VectorXd bi = game.local_capacity(0);
  for (int i = 0; i < N; ++i) {
    auto blk = oy.segment(i * m, m);
    blk = bi;
    for (int j : graph.neighbors[i]) {
      const double w = graph.W(i, j);
      blk.noalias() += w * ((y.segment(i * m, m) - y.segment(j * m, m)) - (p.segment(i * m, m) - p.segment(j * m, m)));
    }
    const Player& pl = game.players[i];
    const int off = game.offset(i);
    for (int k = 0; k < pl.dim(); ++k) blk(pl.markets[k]) -= x.u()(off + k);
  }
}

State apply_tilde_V(const GameInstance& game, const CommGraph& graph, const State& x, const SlopeDraw& draw) {
  State out = State::zeros(game);
  apply_tilde_V_into(game, graph, x, draw, out);
  return out;
}

State apply_V(const GameInstance& game, const CommGraph& graph, const State& x) {
  return apply_tilde_V(game, graph, x, SlopeDraw::shared(game.demand_slope_mean));
}

VrEstimate vr_estimate(const GameInstance& game, const CommGraph& graph, const State& x,
                       std::span<const SlopeDraw> batch) {
  if (batch.empty()) throw ConfigError("vr_estimate: empty batch");
  const auto S = static_cast<double>(batch.size());
  std::vector<State> samples;
  samples.reserve(batch.size());
  State mean = State::zeros(game);
  for (const auto& draw : batch) {
    samples.push_back(apply_tilde_V(game, graph, x, draw));
    mean.data() += samples.back().data();
  }
  mean.data() /= S;

  const State exact = apply_V(game, graph, x);
  VrEstimate est{mean, {}};
  est.stats.batch_size = batch.size();
  est.stats.oracle_count = batch.size();
  est.stats.sample_mean = mean.data();
  est.stats.bias_bound_estimate = std::sqrt(S) * (mean.data() - exact.data()).norm();
  for (const auto& s : samples) {
    est.stats.second_moment_estimate += (s.data() - exact.data()).squaredNorm() / S;
    est.stats.dispersion += (s.data() - mean.data()).squaredNorm() / S;
  }
  return est;
}

void prox_local(const Player& player, double, Eigen::Ref<Eigen::VectorXd> u_i) {
  u_i = u_i.cwiseMax(0.0).cwiseMin(player.box_upper);
}

void resolvent_T_inplace(const GameInstance& game, const StepConfig& step, State& v) {
  for (int i = 0; i < game.num_players(); ++i)
    prox_local(game.players[i], step.gamma(i), v.u().segment(game.offset(i), game.players[i].dim()));
  v.y() = v.y().cwiseMax(0.0);
}

State resolvent_T(const GameInstance& game, const StepConfig& step, State v) {
  resolvent_T_inplace(game, step, v);
  return v;
}

double coupling_norm(std::span<const Eigen::MatrixXd> blocks) {
  double best = 0.0;
  for (const auto& A : blocks)
    if (A.size() > 0) best = std::max(best, Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0));
  return best;
}

double coupling_norm(const GameInstance& game) {
  std::vector<Eigen::MatrixXd> blocks;
  for (int i = 0; i < game.num_players(); ++i) blocks.push_back(game.coupling_block(i));
  return coupling_norm(blocks);
}

double lipschitz_bound(double ell, double kappa, double coupling) { return ell + 2.0 * kappa + coupling; }

double lipschitz_V(const GameAnalysis& analysis, const CommGraph& graph, const GameInstance& game) {
  return lipschitz_bound(analysis.ell, graph.kappa, coupling_norm(game));
}

Eigen::MatrixXd dense_V_matrix(const GameInstance& game, const CommGraph& graph) {
  const int d = game.dim();
  const int nm = game.num_players() * game.num_markets();
  const int n = d + 2 * nm;
  if (n > 2000) throw ConfigError("dense_V_matrix: instance too large");
  Eigen::MatrixXd B(n, n);
  const State zero = State::zeros(game);
  const Eigen::VectorXd v0 = apply_V(game, graph, zero).data();
  State e = State::zeros(game);
  for (int c = 0; c < n; ++c) {
    e.data().setZero();
    e.data()(c) = 1.0;
    B.col(c) = apply_V(game, graph, e).data() - v0;
  }
  return B;
}

}  // namespace dvrsfbf
