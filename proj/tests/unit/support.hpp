#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/operators.hpp"

#include <Eigen/Dense>

#include <random>

namespace fixtures {

using namespace dvrsfbf;

/// One firm, one market: cost a u^2 + r u, demand q - p u.
inline GameInstance scalar_game(double a = 1.0, double r = 0.5, double q = 3.0, double p = 6.0, double theta = 1.0,
                                double capacity = 0.5) {
  GameInstance g;
  Player pl;
  pl.markets = {0};
  pl.cost_quad = a;
  pl.cost_lin = Eigen::VectorXd::Constant(1, r);
  pl.box_upper = Eigen::VectorXd::Constant(1, theta);
  g.players.push_back(pl);
  g.capacity = Eigen::VectorXd::Constant(1, capacity);
  g.demand_intercept = Eigen::VectorXd::Constant(1, q);
  g.demand_slope_mean = Eigen::VectorXd::Constant(1, p);
  g.slope_variance = 0.1;
  g.finalize();
  return g;
}

inline CommGraph single_node() { return validate(Eigen::MatrixXd::Zero(1, 1)); }

inline Eigen::VectorXd uniform_vec(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> U(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = U(rng);
  return v;
}

/// Primal point in the box, scaled down until A u <= b.
inline Eigen::VectorXd feasible_u(const GameInstance& g, std::mt19937_64& rng) {
  Eigen::VectorXd u = uniform_vec(rng, g.dim(), 0.0, 1.0).cwiseProduct(g.box_upper());
  const Eigen::VectorXd load = g.coupling_matrix() * u;
  double s = 1.0;
  for (Eigen::Index j = 0; j < load.size(); ++j)
    if (load(j) > g.capacity(j)) s = std::min(s, g.capacity(j) / load(j));
  return s * u;
}

inline State random_state(const GameInstance& g, std::mt19937_64& rng, double spread = 2.0) {
  State x = State::zeros(g);
  x.data() = uniform_vec(rng, x.size(), -spread, spread);
  return x;
}

inline StepConfig random_steps(int N, std::mt19937_64& rng, double lo = 0.05, double hi = 0.5) {
  StepConfig s;
  s.gamma = uniform_vec(rng, N, lo, hi);
  s.sigma = uniform_vec(rng, N, lo, hi);
  s.tau = uniform_vec(rng, N, lo, hi);
  return s;
}

inline GameInstance zero_noise(GameInstance g) {
  g.slope_variance = 0.0;
  g.finalize();
  return g;
}

}  // namespace fixtures
