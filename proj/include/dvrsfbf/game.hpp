#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dvrsfbf {

/// One firm: the markets it supplies and its production cost
/// c_i(u_i) = a_i (1'u_i)^2 + r_i'u_i on the box [0, theta_i].
struct Player {
  std::vector<int> markets;  // ascending; column k of A_i is e_{markets[k]}
  double cost_quad = 0.0;
  Eigen::VectorXd cost_lin;
  Eigen::VectorXd box_upper;

  int dim() const { return static_cast<int>(markets.size()); }
};

/// Networked Cournot SGNEP with market capacity coupling A u <= b.
///
/// The inverse demand of market j is P_j(u) = q_j - p_j(xi) [A u]_j with
/// p_j(xi) ~ N(demand_slope_mean_j, slope_variance). `monotone_shift`
/// subtracts shift * u from the pseudogradient; it is zero for the
/// strongly monotone model and equal to the smallest eigenvalue of the
/// symmetric affine part for the merely monotone variant.
///
/// Call finalize() after editing any field; it validates the instance and
/// rebuilds the column layout used by every evaluation routine.
struct GameInstance {
  std::vector<Player> players;
  Eigen::VectorXd capacity;
  Eigen::VectorXd demand_intercept;
  Eigen::VectorXd demand_slope_mean;
  double slope_variance = 0.1;
  double monotone_shift = 0.0;

  // Provenance of generated instances. Not used by any computation.
  std::uint64_t seed = 0;
  std::string policy;

  void finalize();

  int num_players() const { return static_cast<int>(players.size()); }
  int num_markets() const { return static_cast<int>(capacity.size()); }
  int dim() const { return total_dim_; }
  int offset(int player) const { return offsets_[player]; }
  /// Market served by primal coordinate `col`.
  int column_market(int col) const { return column_market_[col]; }
  int column_player(int col) const { return column_player_[col]; }
  /// Local share b_i of the capacity. Uniform split b / N.
  Eigen::VectorXd local_capacity(int player) const;
  /// Dense A_i (m x d_i).
  Eigen::MatrixXd coupling_block(int player) const;
  /// Dense A = [A_1 | ... | A_N] (m x d).
  Eigen::MatrixXd coupling_matrix() const;
  Eigen::VectorXd box_upper() const;
  /// Firms that serve market j.
  const std::vector<int>& market_players(int market) const {
    return market_players_[market];
  }

 private:
  int total_dim_ = 0;
  std::vector<int> offsets_;
  std::vector<int> column_market_;
  std::vector<int> column_player_;
  std::vector<std::vector<int>> market_players_;
};

/// How firms are attached to markets by the generator.
enum class MarketPolicy {
  AllToAll,      // every firm serves every market
  Random,        // each firm joins 1-3 uniformly chosen markets, repaired
  Shipped,       // shipped 20-firm / 7-market topology
};

MarketPolicy parse_market_policy(const std::string& name);
std::string to_string(MarketPolicy policy);

/// Shipped incidence for the 20-firm / 7-market benchmark (0-based markets).
const std::vector<std::vector<int>>& shipped_incidence();

/// Seeded Cournot instance. Parameters are drawn uniformly from:
/// b in [0.5,1], theta in [1,1.5], a in [1,8], r in [0.1,0.6], q in [2,4],
/// p in [5,7]; slope variance 0.1.
GameInstance generate_cournot(int num_players, int num_markets, std::uint64_t seed,
                              MarketPolicy policy);

/// Turns `game` into the merely monotone variant: a_i = 0 and the
/// pseudogradient shifted so that lambda_min of its symmetric part is 0.
GameInstance make_monotone_variant(GameInstance game);

/// Per-market slope realizations. One column shared by all players, or one
/// column per player when noise is drawn per agent.
struct SlopeDraw {
  Eigen::MatrixXd slopes;

  static SlopeDraw shared(Eigen::VectorXd s) {
    SlopeDraw d;
    d.slopes = std::move(s);
    return d;
  }
  Eigen::Ref<const Eigen::VectorXd> for_player(int i) const {
    return slopes.col(slopes.cols() == 1 ? 0 : i);
  }
};

/// F(u) in closed form at the mean demand slopes.
Eigen::VectorXd pseudogradient(const GameInstance& game, const Eigen::VectorXd& u);

/// F~(u, xi): the pseudogradient with p_j replaced by the realization.
Eigen::VectorXd sample_pseudogradient(const GameInstance& game, const Eigen::VectorXd& u,
                                      const SlopeDraw& draw);

/// Allocation-free kernel behind both pseudogradient variants.
void pseudogradient_into(const GameInstance& game, Eigen::Ref<const Eigen::VectorXd> u,
                         const SlopeDraw& draw, Eigen::Ref<Eigen::VectorXd> out);

/// E[f_i(u, xi)] for player i. Only used to cross-check gradients.
double expected_cost(const GameInstance& game, const Eigen::VectorXd& u, int player);

struct GameAnalysis {
  Eigen::MatrixXd affine_matrix;  // M
  Eigen::VectorXd affine_offset;  // m_vec
  double mu = 0.0;
  double ell = 0.0;
  bool is_strongly_monotone = false;
};

/// M, m_vec with F(u) = M u + m_vec, mu = max(0, lambda_min(sym M)),
/// ell = ||M||_2. `slopes` overrides the mean slopes when given.
GameAnalysis analyze(const GameInstance& game);
GameAnalysis analyze(const GameInstance& game, const Eigen::VectorXd& slopes);
GameAnalysis analyze_matrix(Eigen::MatrixXd M, Eigen::VectorXd offset);

/// Firms sharing at least one market with firm i.
std::vector<std::vector<int>> interference_neighbors(const GameInstance& game);

}  // namespace dvrsfbf
