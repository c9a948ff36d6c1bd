#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/operators.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace dvrsfbf {

struct Projection {
  Eigen::VectorXd point;
  Eigen::VectorXd multipliers;  // one per coupled row
  int sweeps = 0;
  double kkt_residual = 0.0;
};

/// Euclidean projection onto C = {u in box : A u <= b} by Dykstra's
/// alternating projections over the box and each capacity row. Stops when
/// a sweep moves the iterate less than `tol` and the KKT residual of the
/// projection problem is at most 10 tol; throws NumericalError after
/// 1e5 sweeps.
Projection project_C(const GameInstance& game, const Eigen::VectorXd& w, double tol = 1e-12);

/// ||proj_C(u - gamma (F(u) + A'y)) - u||, the primal natural residual.
double residual(const GameInstance& game, const CommGraph& graph, const State& x, const StepConfig& step);

/// Ball-restricted merit function setup.
struct GapSpec {
  State center;
  double radius = 1.0;
  int starts = 4;
  int iterations = 5000;
  int random_probes = 64;
  std::uint64_t seed = 0;
};

struct GapReport {
  double value = 0.0;  // best probe value; a lower bound of the true sup
  int probes = 0;
  bool center_contains_point = false;  // ||z - x_c|| <= C
};

/// Q(x, z) = <V(x), z - x>, the merit integrand for feasible x and z.
double merit_integrand(const GameInstance& game, const CommGraph& graph, const State& x, const State& z);

/// Lower bound of sup { Q(x, z) : x in X, ||x - x_c|| <= C } by projected
/// gradient ascent (accelerated, with restarts) from several starts plus
/// random feasible probes. z is
/// itself a probe when it lies in the ball. Returns +inf if z violates
/// the local constraints (H(z) = +inf). `probe_log`, when given, receives
/// (x, Q(x, z)) for every evaluated probe.
GapReport gap_estimate(const GameInstance& game, const CommGraph& graph, const State& z, const GapSpec& spec,
                       std::vector<std::pair<State, double>>* probe_log = nullptr);

struct RateFit {
  double factor = 0.0;  // exp(slope) of log(value) against index
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares fit of log(series[t]) = intercept + slope t.
RateFit rate_fit(std::span<const double> series);

struct TrendTest {
  double tau = 0.0;
  double z_score = 0.0;  // normal approximation under no trend
};

/// Kendall's tau of the series against its index.
TrendTest kendall_trend(std::span<const double> series);

}  // namespace dvrsfbf
