#include "dvrsfbf/solver.hpp"

#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/metrics.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

namespace dvrsfbf {

Mode parse_mode(const std::string& name) {
  if (name == "strongly-monotone" || name == "strong") return Mode::StronglyMonotone;
  if (name == "monotone") return Mode::Monotone;
  throw ConfigError("unknown mode '" + name + "'");
}

std::string to_string(Mode mode) { return mode == Mode::Monotone ? "monotone" : "strongly-monotone"; }

void SolverParams::validate(int num_agents) const {
  if (T < 0) throw ConfigError("T must be >= 0");
  if (K < 1) throw ConfigError("K must be >= 1");
  step.validate(num_agents);
  if (residual_step) residual_step->validate(num_agents);
  if (mode == Mode::Monotone && !averaging) throw ConfigError("monotone mode requires averaging");
  if (mode == Mode::Monotone && bias_injection)
    throw ConfigError("bias injection is only supported in strongly monotone mode");
  if (stopping.cadence < 1) throw ConfigError("residual cadence must be >= 1");
}

double reference_distance_squared(const State& x, const State& ref, const Eigen::VectorXd* phi_inv) {
  const int d = x.primal_dim();
  const int nm = x.dual_dim();
  double acc = 0.0;
  for (int c = 0; c < d; ++c) {
    const double e = x.data()(c) - ref.data()(c);
    acc += phi_inv ? e * e / (*phi_inv)(c) : e * e;
  }
  for (int c = d + nm; c < d + 2 * nm; ++c) {
    const double e = x.data()(c) - ref.data()(c);
    acc += phi_inv ? e * e / (*phi_inv)(c) : e * e;
  }
  return acc;
}

State initial_state(const GameInstance& game) {
  State x = State::zeros(game);
  x.u() = 0.5 * game.box_upper();
  return x;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// x <- x - phi_inv .* v
void backward_from(Eigen::VectorXd& x, const Eigen::VectorXd& phi_inv, const Eigen::VectorXd& v) {
  x.array() -= phi_inv.array() * v.array();
}

void check_finite(const State& s, int epoch, int step, const char* where) {
  if (!s.all_finite())
    throw NumericalError(std::string("non-finite state in ") + where + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step),
                         epoch, step);
}

}  // namespace

TrajectoryRecorder::TrajectoryRecorder(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                                       const RunContext& ctx, Trajectory& traj)
    : game_(game), graph_(graph), params_(params), ctx_(ctx), traj_(traj), start_(Clock::now()) {
  traj_.contraction = ctx.contraction;
}

bool TrajectoryRecorder::record(int epoch, const State& x, std::uint64_t batch) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.oracles = traj_.total_oracles;
  rec.batch_size = batch;
  rec.residual = residual(game_, graph_, x, params_.residual_step ? *params_.residual_step : params_.step);
  if (ctx_.reference) rec.dist_to_ref = std::sqrt(reference_distance_squared(x, *ctx_.reference));
  rec.wall_ms = elapsed_ms(start_);
  rec.x = x;
  const double res = rec.residual;
  traj_.epochs.push_back(std::move(rec));

  const auto& stop = params_.stopping;
  if (stop.target_residual > 0.0 && epoch % stop.cadence == 0 && res <= stop.target_residual) {
    traj_.reached_target = true;
    traj_.oracles_at_target = traj_.total_oracles;
    return true;
  }
  if (traj_.total_oracles > stop.oracle_budget) {
    traj_.budget_exhausted = true;
    return true;
  }
  return false;
}

Eigen::VectorXd epoch_sampling_mean(const NoiseModel& noise, const SolverParams& params, std::uint64_t master_seed,
                                    int t, std::uint64_t S) {
  if (!params.bias_injection) return noise.mean;
  Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), Phase::Bias, 0,
                                           StreamKey::kShared});
  return inject_bias(noise, t, S, s);
}

void check_step_policy(const GameInstance& game, const CommGraph& graph, const SolverParams& params) {
  if (params.step_override) return;
  const double bound = step_bound(game, analyze(game), graph, params.mode, params.T);
  const double alpha = params.step.alpha();
  if (alpha > bound * (1.0 + 1e-12))
    throw ConfigError("step " + std::to_string(alpha) + " exceeds the " + to_string(params.mode) +
                      " policy bound " + std::to_string(bound) + " (set step_override to run anyway)");
}

Trajectory dvrsfbf_run(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                       std::uint64_t master_seed, const RunContext& ctx) {
  params.validate(game.num_players());
  check_step_policy(game, graph, params);
  Trajectory traj;
  traj.algorithm = "dvrsfbf";
  TrajectoryRecorder rec(game, graph, params, ctx, traj);

  const Eigen::VectorXd phi_inv = params.step.inverse_metric(game);
  const NoiseModel noise = NoiseModel::from_game(game);
  const int columns = params.per_agent_noise ? game.num_players() : 1;
  const bool averaging = params.averaging || params.mode == Mode::Monotone;

  State x = initial_state(game);
  if (rec.record(0, x, 0) || params.T == 0) return traj;

  State vbar = State::zeros(game), v_half = vbar, v_anchor = vbar, z = vbar, z_half = vbar;
  State avg_total = State::zeros(game);
  State avg_epoch = State::zeros(game);

  for (int t = 0; t < params.T; ++t) {
    const std::uint64_t S = params.schedule.size(t);
    const Eigen::VectorXd mean = epoch_sampling_mean(noise, params, master_seed, t, S);

    // Frozen mini-batch anchor estimate at x^t.
    {
      Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), Phase::OuterBatch, 0,
                                               StreamKey::kShared});
      const SlopeBatch batch = draw_batch(mean, noise.variance, columns, S, s);
      apply_tilde_V_into(game, graph, x, batch.mean_slopes, vbar);
      traj.total_oracles += S;
      traj.estimator_oracles += batch.count;
    }

    z = x;
    if (averaging) avg_epoch.data().setZero();
    for (int k = 0; k < params.K; ++k) {
      z_half.data() = z.data();
      backward_from(z_half.data(), phi_inv, vbar.data());
      resolvent_T_inplace(game, params.step, z_half);
      if (params.record_inner) traj.half_iterates.push_back(z_half);

      Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), Phase::InnerStep,
                                               static_cast<std::uint64_t>(k), StreamKey::kShared});
      const SlopeDraw xi = draw_slopes(mean, noise.variance, columns, s);
      apply_tilde_V_into(game, graph, z_half, xi, v_half);
      apply_tilde_V_into(game, graph, x, xi, v_anchor);
      traj.total_oracles += 2;

      z.data() = z_half.data();
      backward_from(z.data(), phi_inv, v_half.data() - v_anchor.data());
      check_finite(z, t, k, "dvrsfbf inner loop");
      if (averaging) avg_epoch.data() += z_half.data();
    }
    x = z;
    if (averaging) {
      avg_epoch.data() /= static_cast<double>(params.K);
      traj.epoch_averages.push_back(avg_epoch);
      avg_total.data() += avg_epoch.data();
    }
    if (rec.record(t + 1, x, S)) break;
  }
  if (averaging && !traj.epoch_averages.empty()) {
    avg_total.data() /= static_cast<double>(traj.epoch_averages.size());
    traj.averaged = avg_total;
  }
  return traj;
}

Trajectory vr_smfbs_run(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                        std::uint64_t master_seed, const RunContext& ctx) {
  params.validate(game.num_players());
  check_step_policy(game, graph, params);
  Trajectory traj;
  traj.algorithm = "vr-smfbs";
  TrajectoryRecorder rec(game, graph, params, ctx, traj);

  const Eigen::VectorXd phi_inv = params.step.inverse_metric(game);
  const NoiseModel noise = NoiseModel::from_game(game);
  const int columns = params.per_agent_noise ? game.num_players() : 1;

  State x = initial_state(game);
  if (rec.record(0, x, 0) || params.T == 0) return traj;

  State v_anchor = State::zeros(game), v_half = v_anchor, x_half = v_anchor;
  for (int t = 0; t < params.T; ++t) {
    const std::uint64_t S = params.schedule.size(t);
    const Eigen::VectorXd mean = epoch_sampling_mean(noise, params, master_seed, t, S);
    {
      Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), Phase::OuterBatch, 0,
                                               StreamKey::kShared});
      const SlopeBatch batch = draw_batch(mean, noise.variance, columns, S, s);
      apply_tilde_V_into(game, graph, x, batch.mean_slopes, v_anchor);
      traj.total_oracles += S;
      traj.estimator_oracles += batch.count;
    }
    x_half.data() = x.data();
    backward_from(x_half.data(), phi_inv, v_anchor.data());
    resolvent_T_inplace(game, params.step, x_half);
    if (params.record_inner) traj.half_iterates.push_back(x_half);
    {
      Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), Phase::HalfBatch, 0,
                                               StreamKey::kShared});
      const SlopeBatch batch = draw_batch(mean, noise.variance, columns, S, s);
      apply_tilde_V_into(game, graph, x_half, batch.mean_slopes, v_half);
      traj.total_oracles += S;
      traj.estimator_oracles += batch.count;
    }
    x.data() = x_half.data();
    backward_from(x.data(), phi_inv, v_half.data() - v_anchor.data());
    check_finite(x, t, 0, "vr-smfbs");
    if (rec.record(t + 1, x, S)) break;
  }
  return traj;
}

double mean_lipschitz_estimate(const GameInstance& game, const CommGraph& graph) {
  const Eigen::VectorXd folded =
      game.demand_slope_mean.array() + 3.0 * std::sqrt(game.slope_variance);
  return lipschitz_V(analyze(game, folded), graph, game);
}

Contraction contraction_constants(double alpha, double mu, double lipschitz, int K, double eta_effective) {
  const double c = mu / 6.0;
  Contraction out;
  out.q = 1.0 - alpha * (mu - 3.0 * c) + 3.0 * alpha * alpha * lipschitz * lipschitz;
  out.rho = 3.0 * alpha * alpha * lipschitz * lipschitz;
  const double qK = std::pow(out.q, K);
  out.delta = qK + out.rho * (1.0 - qK) / (1.0 - out.q);
  out.eta_tilde = std::max(out.delta, eta_effective);
  return out;
}

double StepPolicy::delta(int inner) const {
  const double qK = std::pow(q, inner);
  return qK + rho * (1.0 - qK) / (1.0 - q);
}

double strong_step_bound(double mu, double lipschitz) {
  if (!(mu > 0.0)) throw ConfigError("strongly monotone step policy needs mu > 0");
  const double c = mu / 6.0;
  const double L2 = 6.0 * lipschitz * lipschitz;
  const double first = (mu - 3.0 * c) / L2;
  const double s = 2.0 * mu + 3.0 * c;
  const double second = (std::sqrt(s * s + 12.0 * lipschitz * lipschitz) - s) / L2;
  return std::min(first, second);
}

double step_bound(const GameInstance& game, const GameAnalysis& analysis, const CommGraph& graph, Mode mode,
                  int horizon) {
  if (mode == Mode::Monotone) {
    if (horizon < 1) throw ConfigError("monotone step policy needs T >= 1");
    return 1.0 / horizon;
  }
  if (!analysis.is_strongly_monotone) throw ConfigError("strongly monotone step policy needs mu > 0");
  return strong_step_bound(analysis.mu, mean_lipschitz_estimate(game, graph));
}

StepPolicy strong_step_policy(double mu, double lipschitz, int num_agents) {
  StepPolicy pol;
  pol.mu = mu;
  pol.lipschitz = lipschitz;
  pol.alpha = 0.9 * strong_step_bound(mu, lipschitz);
  pol.c = mu / 6.0;
  const Contraction cc = contraction_constants(pol.alpha, mu, lipschitz, 1, 0.0);
  pol.q = cc.q;
  pol.rho = cc.rho;
  if (!(pol.q < 1.0) || !(pol.rho < 1.0 - pol.q))
    throw NumericalError("step policy produced q = " + std::to_string(pol.q) + ", rho = " + std::to_string(pol.rho) +
                         " violating q < 1, rho < 1 - q");
  pol.step = StepConfig::uniform(num_agents, pol.alpha);
  return pol;
}

StepPolicy step_policy(const GameInstance& game, const GameAnalysis& analysis, const CommGraph& graph, Mode mode,
                       int horizon) {
  if (mode == Mode::StronglyMonotone) {
    if (!analysis.is_strongly_monotone) throw ConfigError("strongly monotone step policy needs mu > 0");
    return strong_step_policy(analysis.mu, mean_lipschitz_estimate(game, graph), game.num_players());
  }
  StepPolicy pol;
  pol.mu = analysis.mu;
  pol.lipschitz = mean_lipschitz_estimate(game, graph);
  pol.alpha = step_bound(game, analysis, graph, mode, horizon);
  pol.K = horizon;
  pol.batch = static_cast<std::uint64_t>(horizon) * static_cast<std::uint64_t>(horizon);
  pol.step = StepConfig::uniform(game.num_players(), pol.alpha);
  return pol;
}

int optimal_inner_length(double q, double rho, double eta) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("optimal_inner_length: q must lie in (0,1)");
  if (!(eta * (1.0 - q) > rho)) throw ConfigError("optimal_inner_length: need eta (1-q) > rho");
  if (!(1.0 - q - rho > 0.0)) throw ConfigError("optimal_inner_length: need 1 - q - rho > 0");
  const double ratio = (eta * (1.0 - q) - rho) / (1.0 - q - rho);
  const double K = std::floor(std::log(ratio) / std::log(q)) + 1.0;
  return std::max(1, static_cast<int>(K));
}

double complexity_proxy(double q, double rho, double eta, int K, double scale) {
  const double ratio = (eta * (1.0 - q) - rho) / (1.0 - q - rho);
  const double qK = std::pow(q, K);
  if (!(ratio > qK)) return std::numeric_limits<double>::infinity();
  const double G = scale * (1.0 - qK) / (ratio - qK);
  return G / (1.0 - eta) + 2.0 * K * std::log(G) / std::log(1.0 / eta);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "epoch,oracles,residual,dist_to_ref,wall_ms\n";
  out.precision(10);
  for (const auto& e : traj.epochs) {
    out << e.epoch << "," << e.oracles << "," << e.residual << ",";
    if (std::isnan(e.dist_to_ref)) out << "";
    else out << e.dist_to_ref;
    out << "," << e.wall_ms << "\n";
  }
}

}  // namespace dvrsfbf
