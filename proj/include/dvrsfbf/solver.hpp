#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/operators.hpp"
#include "dvrsfbf/sampling.hpp"

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dvrsfbf {

enum class Mode { StronglyMonotone, Monotone };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct StoppingRule {
  /// Stop once residual <= target_residual (checked every `cadence`
  /// epochs). Zero disables the check and the run uses the full T.
  double target_residual = 0.0;
  int cadence = 1;
  /// Abort the run once the cumulative oracle count exceeds this.
  std::uint64_t oracle_budget = 1'000'000'000ULL;
};

struct SolverParams {
  int T = 1;
  int K = 1;
  StepConfig step;
  /// Step used inside the residual metric; `step` when unset.
  std::optional<StepConfig> residual_step;
  BatchSchedule schedule = BatchSchedule::constant(1);
  Mode mode = Mode::StronglyMonotone;
  bool averaging = false;
  bool bias_injection = false;
  bool per_agent_noise = false;
  /// Accept steps above the theoretical bound.
  bool step_override = false;
  bool record_inner = false;
  StoppingRule stopping;
  std::uint64_t replicate = 0;

  /// Enforces K, T >= 1 (T >= 0 allowed), monotone-mode constraints and
  /// step validity. Throws ConfigError.
  void validate(int num_agents) const;
};

/// Contraction constants of the strongly monotone analysis.
struct Contraction {
  double q = 0.0;
  double rho = 0.0;
  double delta = 0.0;
  double eta_tilde = 0.0;  // max(delta, eta^factor)
};

struct EpochRecord {
  int epoch = 0;
  std::uint64_t oracles = 0;
  std::uint64_t batch_size = 0;
  double residual = 0.0;
  double dist_to_ref = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  State x;
};

struct Trajectory {
  std::string algorithm;
  std::vector<EpochRecord> epochs;  // epochs[0] is the initial state
  std::vector<State> epoch_averages;  // z-bar^t (averaging only)
  std::optional<State> averaged;      // z-bar_T (averaging only)
  std::vector<State> half_iterates;   // when record_inner
  std::uint64_t total_oracles = 0;
  std::uint64_t estimator_oracles = 0;  // sum of EstimatorStats-style counts
  bool reached_target = false;
  std::uint64_t oracles_at_target = 0;
  bool budget_exhausted = false;
  std::optional<Contraction> contraction;

  const State& final_state() const { return epochs.back().x; }
};

/// Distance used for reference comparisons: the (u, y) blocks, optionally
/// Phi-weighted. The consensus auxiliary p is excluded because its limit
/// is not unique when a capacity constraint is slack.
double reference_distance_squared(const State& x, const State& ref, const Eigen::VectorXd* phi_inv = nullptr);

/// u^0 = box midpoint, p^0 = 0, y^0 = 0.
State initial_state(const GameInstance& game);

struct RunContext {
  const State* reference = nullptr;  // enables dist_to_ref
  std::optional<Contraction> contraction;
};

/// Double-loop variance-reduced stochastic FBF.
Trajectory dvrsfbf_run(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                       std::uint64_t master_seed, const RunContext& ctx = {});

/// Single-loop FBF with two increasing mini-batches per iteration.
Trajectory vr_smfbs_run(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                        std::uint64_t master_seed, const RunContext& ctx = {});

struct StepPolicy {
  StepConfig step;
  double alpha = 0.0;
  double c = 0.0;
  double mu = 0.0;
  double lipschitz = 0.0;  // L-hat
  double q = 0.0;
  double rho = 0.0;
  int K = 0;              // monotone mode: K = T
  std::uint64_t batch = 0;  // monotone mode: S_t = T^2

  double delta(int K) const;
};

/// L-hat: ell_V with the slope noise folded in (mean slope + 3 sd).
double mean_lipschitz_estimate(const GameInstance& game, const CommGraph& graph);

/// Step sizes from the convergence theory. Strongly monotone: c = mu/6 and
/// alpha = 0.9 min{(mu-3c)/(6L^2), (sqrt((2mu+3c)^2+12L^2)-(2mu+3c))/(6L^2)}.
/// Monotone: alpha = 1/T, K = T, S_t = T^2.
StepPolicy step_policy(const GameInstance& game, const GameAnalysis& analysis, const CommGraph& graph, Mode mode,
                       int horizon = 0);

/// min{(mu-3c)/(6L^2), (sqrt((2mu+3c)^2+12L^2)-(2mu+3c))/(6L^2)}, c = mu/6.
double strong_step_bound(double mu, double lipschitz);
/// Strongly monotone policy from mu and L-hat alone.
StepPolicy strong_step_policy(double mu, double lipschitz, int num_agents);

/// Largest admissible alpha (strict bound without the 0.9 safety factor).
double step_bound(const GameInstance& game, const GameAnalysis& analysis, const CommGraph& graph, Mode mode,
                  int horizon);

Contraction contraction_constants(double alpha, double mu, double lipschitz, int K, double eta_effective);

/// K = floor(log_q((eta(1-q)-rho)/(1-q-rho))) + 1. Throws ConfigError when
/// eta(1-q) <= rho or 1-q-rho <= 0.
int optimal_inner_length(double q, double rho, double eta);

/// Total-oracle proxy from the complexity bound, as a function of K:
/// G(K)/(1-eta) + 2K log_{1/eta}(G(K)) with
/// G(K) = (1-q^K) / ((eta(1-q)-rho)/(1-q-rho) - q^K). Infinite if K is
/// below the feasibility threshold.
double complexity_proxy(double q, double rho, double eta, int K, double scale = 1e4);

/// Throws ConfigError when the step exceeds step_bound for the run's
/// mode and horizon, unless params.step_override is set.
void check_step_policy(const GameInstance& game, const CommGraph& graph, const SolverParams& params);

/// Slope mean used for every draw of epoch t: the model mean, or a point
/// of the 1/sqrt(S_t) ball around it when bias injection is on.
Eigen::VectorXd epoch_sampling_mean(const NoiseModel& noise, const SolverParams& params, std::uint64_t master_seed,
                                    int t, std::uint64_t S);

/// Appends epoch records to a trajectory and applies the stopping rule.
class TrajectoryRecorder {
 public:
  TrajectoryRecorder(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                     const RunContext& ctx, Trajectory& traj);
  /// Records x as the state after `epoch`; returns true when the run
  /// should stop (target reached or oracle budget exceeded).
  bool record(int epoch, const State& x, std::uint64_t batch);

 private:
  const GameInstance& game_;
  const CommGraph& graph_;
  const SolverParams& params_;
  const RunContext& ctx_;
  Trajectory& traj_;
  std::chrono::steady_clock::time_point start_;
};

void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

}  // namespace dvrsfbf
