#include "dvrsfbf/game.hpp"

#include "dvrsfbf/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace dvrsfbf {

void GameInstance::finalize() {
  const int N = num_players();
  const int m = num_markets();
  if (N < 1) throw ConfigError("game needs at least one player");
  if (m < 1) throw ConfigError("game needs at least one market");
  if (demand_intercept.size() != m || demand_slope_mean.size() != m)
    throw ConfigError("demand parameters must have one entry per market");
  if ((capacity.array() <= 0.0).any()) throw ConfigError("capacity must be positive");
  if (!(slope_variance >= 0.0)) throw ConfigError("slope variance must be nonnegative");
  if (!(monotone_shift >= 0.0)) throw ConfigError("monotone shift must be nonnegative");

  offsets_.assign(N + 1, 0);
  column_market_.clear();
  column_player_.clear();
  market_players_.assign(m, {});
  for (int i = 0; i < N; ++i) {
    const Player& pl = players[i];
    if (pl.markets.empty())
      throw ConfigError("player " + std::to_string(i) + " serves no market");
    if (pl.cost_lin.size() != pl.dim() || pl.box_upper.size() != pl.dim())
      throw ConfigError("player " + std::to_string(i) + ": parameter length != #markets");
    if (!(pl.cost_quad >= 0.0))
      throw ConfigError("player " + std::to_string(i) + ": cost_quad must be >= 0");
    if ((pl.box_upper.array() < 0.0).any())
      throw ConfigError("player " + std::to_string(i) + ": box upper bound below 0");
    for (int k = 0; k < pl.dim(); ++k) {
      const int j = pl.markets[k];
      if (j < 0 || j >= m)
        throw ConfigError("player " + std::to_string(i) + ": market index out of range");
      if (k > 0 && pl.markets[k - 1] >= j)
        throw ConfigError("player " + std::to_string(i) + ": markets must be strictly ascending");
      column_market_.push_back(j);
      column_player_.push_back(i);
      market_players_[j].push_back(i);
    }
    offsets_[i + 1] = offsets_[i] + pl.dim();
  }
  for (int j = 0; j < m; ++j)
    if (market_players_[j].empty())
      throw ConfigError("market " + std::to_string(j) + " is not served by any firm");
  total_dim_ = offsets_[N];
}

Eigen::VectorXd GameInstance::local_capacity(int) const {
  return capacity / static_cast<double>(num_players());
}

Eigen::MatrixXd GameInstance::coupling_block(int player) const {
  const Player& pl = players[player];
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(num_markets(), pl.dim());
  for (int k = 0; k < pl.dim(); ++k) A(pl.markets[k], k) = 1.0;
  return A;
}

Eigen::MatrixXd GameInstance::coupling_matrix() const {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(num_markets(), dim());
  for (int c = 0; c < dim(); ++c) A(column_market_[c], c) = 1.0;
  return A;
}

Eigen::VectorXd GameInstance::box_upper() const {
  Eigen::VectorXd theta(dim());
  for (int i = 0; i < num_players(); ++i) theta.segment(offsets_[i], players[i].dim()) = players[i].box_upper;
  return theta;
}

MarketPolicy parse_market_policy(const std::string& name) {
  if (name == "all-to-all" || name == "all") return MarketPolicy::AllToAll;
  if (name == "random") return MarketPolicy::Random;
  if (name == "shipped") return MarketPolicy::Shipped;
  throw ConfigError("unknown market policy '" + name + "'");
}

std::string to_string(MarketPolicy policy) {
  switch (policy) {
    case MarketPolicy::AllToAll: return "all-to-all";
    case MarketPolicy::Random: return "random";
    case MarketPolicy::Shipped: return "shipped";
  }
  return "?";
}

const std::vector<std::vector<int>>& shipped_incidence() {
  // Firms F1..F20 against markets M1..M7, 0-based.
  static const std::vector<std::vector<int>> incidence = {
      {0},    {0, 1}, {0, 1}, {1},    {1, 2}, {2},    {2, 3},
      {2, 3}, {3},    {3, 4}, {4},    {4, 5}, {4, 5}, {5},
      {5, 6}, {6},    {0, 6}, {0, 3}, {1, 5}, {2, 6},
  };
  return incidence;
}

namespace {

std::vector<std::vector<int>> draw_incidence(int N, int m, MarketPolicy policy, std::mt19937_64& rng) {
  std::vector<std::vector<int>> inc(N);
  switch (policy) {
    case MarketPolicy::AllToAll:
      for (auto& row : inc)
        for (int j = 0; j < m; ++j) row.push_back(j);
      return inc;
    case MarketPolicy::Shipped:
      if (N != 20 || m != 7) throw ConfigError("shipped topology is defined for N=20, m=7 only");
      return shipped_incidence();
    case MarketPolicy::Random: {
      std::uniform_int_distribution<int> count_dist(1, std::min(3, m));
      std::vector<int> all(m);
      for (int j = 0; j < m; ++j) all[j] = j;
      for (auto& row : inc) {
        const int c = count_dist(rng);
        std::vector<int> pick = all;
        std::shuffle(pick.begin(), pick.end(), rng);
        row.assign(pick.begin(), pick.begin() + c);
      }
      // Repair: hand every unserved market to a uniformly chosen firm.
      std::uniform_int_distribution<int> firm_dist(0, N - 1);
      for (int j = 0; j < m; ++j) {
        bool served = false;
        for (const auto& row : inc) served = served || std::find(row.begin(), row.end(), j) != row.end();
        if (!served) inc[firm_dist(rng)].push_back(j);
      }
      for (auto& row : inc) std::sort(row.begin(), row.end());
      return inc;
    }
  }
  return inc;
}

}  // namespace

GameInstance generate_cournot(int num_players, int num_markets, std::uint64_t seed, MarketPolicy policy) {
  if (num_players < 1 || num_markets < 1)
    throw ConfigError("generate_cournot: need N >= 1 and m >= 1");
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  GameInstance g;
  g.seed = seed;
  g.policy = to_string(policy);
  const auto incidence = draw_incidence(num_players, num_markets, policy, rng);

  g.capacity.resize(num_markets);
  g.demand_intercept.resize(num_markets);
  g.demand_slope_mean.resize(num_markets);
  for (int j = 0; j < num_markets; ++j) g.capacity(j) = uniform(0.5, 1.0);
  for (int j = 0; j < num_markets; ++j) g.demand_intercept(j) = uniform(2.0, 4.0);
  for (int j = 0; j < num_markets; ++j) g.demand_slope_mean(j) = uniform(5.0, 7.0);
  g.slope_variance = 0.1;

  g.players.resize(num_players);
  for (int i = 0; i < num_players; ++i) {
    Player& pl = g.players[i];
    pl.markets = incidence[i];
    const int di = pl.dim();
    pl.box_upper.resize(di);
    pl.cost_lin.resize(di);
    for (int k = 0; k < di; ++k) pl.box_upper(k) = uniform(1.0, 1.5);
    pl.cost_quad = uniform(1.0, 8.0);
    for (int k = 0; k < di; ++k) pl.cost_lin(k) = uniform(0.1, 0.6);
  }
  g.finalize();
  return g;
}

GameInstance make_monotone_variant(GameInstance game) {
  for (auto& pl : game.players) pl.cost_quad = 0.0;
  game.monotone_shift = 0.0;
  game.finalize();
  const Eigen::MatrixXd M = analyze(game).affine_matrix;
  const Eigen::MatrixXd sym = 0.5 * (M + M.transpose());
  game.monotone_shift = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues()(0);
  game.finalize();
  return game;
}

void pseudogradient_into(const GameInstance& game, Eigen::Ref<const Eigen::VectorXd> u, const SlopeDraw& draw,
                         Eigen::Ref<Eigen::VectorXd> out) {
  const int d = game.dim();
  const int m = game.num_markets();
  if (u.size() != d || out.size() != d) throw ConfigError("pseudogradient: dimension mismatch");
  if (draw.slopes.rows() != m) throw ConfigError("pseudogradient: slope draw has wrong length");

  // Aggregate supply per market, [A u]_j.
  double supply_buf[64];
  std::vector<double> supply_heap;
  double* supply = supply_buf;
  if (m > 64) {
    supply_heap.assign(m, 0.0);
    supply = supply_heap.data();
  } else {
    std::fill(supply, supply + m, 0.0);
  }
  for (int c = 0; c < d; ++c) supply[game.column_market(c)] += u(c);

  const double shift = game.monotone_shift;
  for (int i = 0; i < game.num_players(); ++i) {
    const Player& pl = game.players[i];
    const int off = game.offset(i);
    const auto s = draw.for_player(i);
    const double total = u.segment(off, pl.dim()).sum();
    for (int k = 0; k < pl.dim(); ++k) {
      const int j = pl.markets[k];
      const double uk = u(off + k);
      out(off + k) = 2.0 * pl.cost_quad * total + pl.cost_lin(k) - game.demand_intercept(j) +
                     s(j) * (supply[j] + uk) - shift * uk;
    }
  }
}

Eigen::VectorXd pseudogradient(const GameInstance& game, const Eigen::VectorXd& u) {
  return sample_pseudogradient(game, u, SlopeDraw::shared(game.demand_slope_mean));
}

Eigen::VectorXd sample_pseudogradient(const GameInstance& game, const Eigen::VectorXd& u, const SlopeDraw& draw) {
  Eigen::VectorXd out(game.dim());
  pseudogradient_into(game, u, draw, out);
  return out;
}

double expected_cost(const GameInstance& game, const Eigen::VectorXd& u, int player) {
  const Eigen::VectorXd supply = game.coupling_matrix() * u;
  const Player& pl = game.players[player];
  const auto ui = u.segment(game.offset(player), pl.dim());
  const double total = ui.sum();
  double cost = pl.cost_quad * total * total + pl.cost_lin.dot(ui) - 0.5 * game.monotone_shift * ui.squaredNorm();
  for (int k = 0; k < pl.dim(); ++k) {
    const int j = pl.markets[k];
    cost -= (game.demand_intercept(j) - game.demand_slope_mean(j) * supply(j)) * ui(k);
  }
  return cost;
}

GameAnalysis analyze_matrix(Eigen::MatrixXd M, Eigen::VectorXd offset) {
  GameAnalysis a;
  const Eigen::MatrixXd sym = 0.5 * (M + M.transpose());
  const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues()(0);
  a.mu = std::max(0.0, lmin);
  a.ell = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()(0);
  a.is_strongly_monotone = a.mu > 1e-10;
  a.affine_matrix = std::move(M);
  a.affine_offset = std::move(offset);
  return a;
}

GameAnalysis analyze(const GameInstance& game) { return analyze(game, game.demand_slope_mean); }

GameAnalysis analyze(const GameInstance& game, const Eigen::VectorXd& slopes) {
  const int d = game.dim();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd offset(d);
  for (int r = 0; r < d; ++r) {
    const int i = game.column_player(r);
    const int j = game.column_market(r);
    const Player& pl = game.players[i];
    const int off = game.offset(i);
    // cost: 2 a_i (1'u_i)
    for (int k = 0; k < pl.dim(); ++k) M(r, off + k) += 2.0 * pl.cost_quad;
    // revenue: p_j ([A u]_j + u_r)
    for (int c = 0; c < d; ++c)
      if (game.column_market(c) == j) M(r, c) += slopes(j);
    M(r, r) += slopes(j) - game.monotone_shift;
    offset(r) = pl.cost_lin(r - off) - game.demand_intercept(j);
  }
  return analyze_matrix(std::move(M), std::move(offset));
}

std::vector<std::vector<int>> interference_neighbors(const GameInstance& game) {
  const int N = game.num_players();
  std::vector<std::set<int>> sets(N);
  for (int j = 0; j < game.num_markets(); ++j) {
    const auto& firms = game.market_players(j);
    for (int a : firms)
      for (int b : firms)
        if (a != b) sets[a].insert(b);
  }
  std::vector<std::vector<int>> out(N);
  for (int i = 0; i < N; ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

}  // namespace dvrsfbf
