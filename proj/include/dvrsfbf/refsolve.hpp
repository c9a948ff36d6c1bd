#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/operators.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dvrsfbf {

struct ReferenceSolution {
  State x;
  double residual = 0.0;
  std::string method;
  long long iterations = 0;
  bool nonunique = false;
  std::vector<State> alternatives;  // all valid patterns when nonunique
};

/// ||x - J(x - alpha V(x))|| with a uniform step alpha.
double fixed_point_residual(const GameInstance& game, const CommGraph& graph, const State& x, double alpha);

/// One deterministic Tseng FBF step with exact V:
/// z = J(x - Phi^-1 V(x)), x+ = z - Phi^-1 (V(z) - V(x)).
void fbf_step(const GameInstance& game, const CommGraph& graph, const StepConfig& step,
              const Eigen::VectorXd& phi_inv, State& x);

/// Deterministic FBF from `x0` (initial_state when omitted); returns every
/// iterate including the start.
std::vector<State> deterministic_fbf(const GameInstance& game, const CommGraph& graph, const StepConfig& step,
                                     int iterations, std::optional<State> x0 = std::nullopt);

/// Deterministic FBF on (V, T) with step 0.9 / ell_V until the fixed-point
/// residual is <= tol. Merely monotone games also track the running
/// average and keep whichever certifies better. Throws BudgetExceeded
/// (with the best residual) after `budget` iterations.
ReferenceSolution solve_reference(const GameInstance& game, const CommGraph& graph, double tol = 1e-10,
                                  long long budget = 10'000'000);

/// Brute-force VE by enumerating activity patterns of box faces and
/// capacity rows, solving each linear KKT system and checking signs.
/// Limited to d + m <= 20. The dual state is y = 1 kron lambda and p is the
/// zero-mean solution of Lbar p = bbar - A u - (b - A u)/N.
ReferenceSolution active_set_enumeration(const GameInstance& game, const CommGraph& graph, double tol = 1e-10);

/// Builds the full splitting state (u, p, y) for a primal VE and its
/// common multiplier.
State state_from_primal_dual(const GameInstance& game, const CommGraph& graph, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& lambda);

/// On-disk cache of reference solutions keyed by (instance hash, tol).
/// Files are JSON, "dvrsfbf-reference" format version 1.
class ReferenceCache {
 public:
  explicit ReferenceCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<ReferenceSolution> load(std::uint64_t key_hash, double tol) const;
  void store(std::uint64_t key_hash, double tol, const ReferenceSolution& sol) const;
  std::filesystem::path path_for(std::uint64_t key_hash, double tol) const;

  /// Cached solve_reference.
  ReferenceSolution solve(const GameInstance& game, const CommGraph& graph, double tol) const;

 private:
  std::filesystem::path dir_;
};

/// FNV-1a hash of the serialized instance and the graph weights.
std::uint64_t problem_hash(const GameInstance& game, const CommGraph& graph);

}  // namespace dvrsfbf
