#pragma once

#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/metrics.hpp"
#include "dvrsfbf/solver.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dvrsfbf {

enum class Algorithm { Dvrsfbf, VrSmfbs, Both };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm algorithm);

struct InstanceSpec {
  int players = 20;
  int markets = 7;
  std::uint64_t seed = 0;
  MarketPolicy policy = MarketPolicy::Shipped;
  std::string file;  // overrides the generator when set
  bool monotone_variant = false;
  nlohmann::json overrides = nlohmann::json::object();
};

struct GraphSpec {
  std::string topology = "cycle";  // cycle | complete
  double weight = 1.0;
  std::string edge_file;  // overrides the cycle when set
};

/// How a step size is chosen: the theory policy, value / ell_V, or a fixed
/// value. Anything but the theory policy sets the step override.
struct StepRule {
  enum class Kind { Theory, InverseLipschitz, Fixed };
  Kind kind = Kind::Theory;
  double value = 0.0;
};

struct ScheduleSpec {
  enum class Kind { Geometric, Polynomial, Constant };
  Kind kind = Kind::Geometric;
  double eta = 0.99;
  double factor = 2.0;
  double exponent = 2.0;  // polynomial: S_t = horizon^exponent, horizon = T
  std::uint64_t size = 1;
};

/// One cell of a comparison sweep; unset fields keep the base value.
struct Cell {
  std::optional<int> players;
  std::optional<int> markets;
  std::optional<MarketPolicy> policy;
  std::optional<double> eta;
  std::optional<double> exponent;
  std::optional<int> K;
};

struct GapOptions {
  std::vector<int> horizons;  // monotone runs: one run per T, gap of z-bar_T
  double radius = 1.0;        // ball around the reference solution
  int starts = 4;
  int iterations = 5000;
};

struct ExperimentConfig {
  std::string name = "custom";
  InstanceSpec instance;
  GraphSpec graph;
  Algorithm algorithm = Algorithm::Dvrsfbf;
  Mode mode = Mode::StronglyMonotone;
  ScheduleSpec schedule;
  int K = 20;  // monotone mode uses K = T
  int T = 1000;
  int replicates = 10;
  int baseline_replicates = 0;  // 0: same as replicates
  double target_residual = 1e-4;
  bool stop_at_target = true;
  int cadence = 1;
  std::uint64_t oracle_budget = 1'000'000'000ULL;
  std::uint64_t seed = 2026;
  StepRule dvrsfbf_step;
  StepRule baseline_step;
  std::optional<double> residual_step = 0.06;  // step inside the residual metric; unset: algorithm step
  bool per_agent_noise = true;
  bool bias_injection = false;
  bool distributed = false;
  int threads = 1;  // replicate-level parallelism
  std::vector<Cell> cells;
  GapOptions gap;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Named protocols: table2, table3, table4, fig2, fig3.
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Fields absent from `j` keep their value in `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Annotated example config covering every key.
std::string example_config();

struct Problem {
  GameInstance game;
  CommGraph graph;
  GameAnalysis analysis;
  double ell_V = 0.0;
};

Problem build_problem(const ExperimentConfig& cfg);
ExperimentConfig apply_cell(const ExperimentConfig& cfg, const Cell& cell);
std::string cell_label(const ExperimentConfig& cfg);

/// Solver parameters for one algorithm (Dvrsfbf or VrSmfbs).
SolverParams solver_params(const ExperimentConfig& cfg, const Problem& problem, Algorithm algorithm);

struct RunSet {
  Algorithm algorithm = Algorithm::Dvrsfbf;
  std::vector<Trajectory> replicates;
};

/// Runs replicates 0..n-1 (n from cfg, or baseline_replicates for the
/// baseline), in parallel when cfg.threads > 1. Results are ordered by
/// replicate and independent of the thread count.
RunSet run_replicates(const ExperimentConfig& cfg, const Problem& problem, Algorithm algorithm,
                      const RunContext& ctx = {}, std::optional<int> count = std::nullopt);

/// Oracles at which a trajectory first reports residual <= target, if ever.
std::optional<std::uint64_t> oracles_to_target(const Trajectory& traj, double target);

struct OracleSummary {
  int replicates = 0;
  int reached = 0;
  double median = 0.0;  // +inf when fewer than half the replicates reach
  double min = 0.0;
  double max = 0.0;
};
OracleSummary summarize_oracles(const RunSet& runs, double target);

/// Mean over replicates of residual, dist_to_ref, oracles and wall time at
/// each epoch index; rows stop at the shortest replicate.
void write_mean_csv(std::ostream& out, const RunSet& runs);

struct ComparisonRow {
  std::string cell;
  int players = 0;
  int markets = 0;
  std::string schedule;
  int K = 0;
  Algorithm algorithm = Algorithm::Dvrsfbf;
  OracleSummary oracles;
  std::uint64_t budget = 0;
};

/// Runs every cell (the base config alone when there are none) for each
/// requested algorithm, stopping each replicate at the target residual.
std::vector<ComparisonRow> compare(const ExperimentConfig& cfg);

/// "6.6e+05" or "> 1e+09" when the median replicate did not reach the target.
std::string format_oracles(const OracleSummary& s, std::uint64_t budget);
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);

struct GapRow {
  int T = 0;
  int replicate = 0;
  double gap = 0.0;
  int probes = 0;
  bool contains = false;
};

/// Monotone protocol: for each horizon T, runs the replicates with
/// K = T, alpha = 1/T, S_t = T^exponent and estimates the gap of z-bar_T
/// in the ball of cfg.gap.radius around the reference solution.
std::vector<GapRow> gap_study(const ExperimentConfig& cfg);
void write_gap_csv(std::ostream& out, const std::vector<GapRow>& rows);

/// meta.json contents: git describe, config hash, master seed, config.
nlohmann::json run_metadata(const ExperimentConfig& cfg);
std::string git_describe();

/// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace dvrsfbf
