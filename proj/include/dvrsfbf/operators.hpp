#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace dvrsfbf {

/// Splitting state x = (u, p, y) stored contiguously: u (d), then the
/// consensus auxiliaries p (N*m), then the local dual copies y (N*m).
class State {
 public:
  State() = default;
  State(int d, int nm) : data_(Eigen::VectorXd::Zero(d + 2 * nm)), d_(d), nm_(nm) {}
  static State zeros(const GameInstance& game) {
    return State(game.dim(), game.num_players() * game.num_markets());
  }

  int primal_dim() const { return d_; }
  int dual_dim() const { return nm_; }
  Eigen::Index size() const { return data_.size(); }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  auto u() { return data_.head(d_); }
  auto u() const { return data_.head(d_); }
  auto p() { return data_.segment(d_, nm_); }
  auto p() const { return data_.segment(d_, nm_); }
  auto y() { return data_.tail(nm_); }
  auto y() const { return data_.tail(nm_); }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Eigen::VectorXd data_;
  int d_ = 0;
  int nm_ = 0;
};

/// Per-agent step sizes gamma_i (primal), sigma_i (p), tau_i (y).
/// Phi = diag(gamma^-1, sigma^-1, tau^-1).
struct StepConfig {
  Eigen::VectorXd gamma;
  Eigen::VectorXd sigma;
  Eigen::VectorXd tau;

  static StepConfig uniform(int num_agents, double alpha);
  /// lambda_max(Phi^-1), the largest step.
  double alpha() const;
  /// Throws ConfigError unless every step is positive and sizes match N.
  void validate(int num_agents) const;
  /// Diagonal of Phi^-1 laid out like a State.
  Eigen::VectorXd inverse_metric(const GameInstance& game) const;
};

/// ||x||^2_Phi.
double phi_norm_squared(const Eigen::VectorXd& phi_inv, const Eigen::VectorXd& v);

/// Scratch-free V~(x, xi) into `out` (same layout as x).
void apply_tilde_V_into(const GameInstance& game, const CommGraph& graph, const State& x, const SlopeDraw& draw,
                        State& out);

/// V(x) = (F(u) + A'y, Lbar y, bbar + Lbar(y - p) - A u).
State apply_V(const GameInstance& game, const CommGraph& graph, const State& x);
/// V with F replaced by the sampled pseudogradient.
State apply_tilde_V(const GameInstance& game, const CommGraph& graph, const State& x, const SlopeDraw& draw);

/// Mini-batch statistics of V~ at a fixed point.
struct EstimatorStats {
  std::uint64_t batch_size = 0;
  std::uint64_t oracle_count = 0;
  Eigen::VectorXd sample_mean;
  /// sqrt(S) * ||mean - V(x)||, a one-shot reading of the bias constant.
  double bias_bound_estimate = 0.0;
  /// Mean of ||V~(x, xi_s) - V(x)||^2 over the batch.
  double second_moment_estimate = 0.0;
  /// Mean of ||V~(x, xi_s) - mean||^2 over the batch.
  double dispersion = 0.0;
};

struct VrEstimate {
  State value;
  EstimatorStats stats;
};

/// Arithmetic mean of V~(x, xi_s) over an explicit batch of draws.
VrEstimate vr_estimate(const GameInstance& game, const CommGraph& graph, const State& x,
                       std::span<const SlopeDraw> batch);

/// Local proximal term. The shipped instance is the indicator of
/// [0, theta_i], whose prox is a clamp regardless of the step.
void prox_local(const Player& player, double step, Eigen::Ref<Eigen::VectorXd> u_i);

/// J_{Phi^-1 T}(v): prox of g on u, identity on p, clamp at 0 on y.
State resolvent_T(const GameInstance& game, const StepConfig& step, State v);
void resolvent_T_inplace(const GameInstance& game, const StepConfig& step, State& v);

/// ||A||_2 for A = blkdiag(A_1, ..., A_N), i.e. max_i ||A_i||_2.
double coupling_norm(std::span<const Eigen::MatrixXd> blocks);
double coupling_norm(const GameInstance& game);

/// ell + 2 kappa + ||A||.
double lipschitz_bound(double ell, double kappa, double coupling);
double lipschitz_V(const GameAnalysis& analysis, const CommGraph& graph, const GameInstance& game);

/// Dense matrix of the linear part of V (tests and reference solvers only).
Eigen::MatrixXd dense_V_matrix(const GameInstance& game, const CommGraph& graph);

}  // namespace dvrsfbf
