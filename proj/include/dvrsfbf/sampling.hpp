#pragma once

#include "dvrsfbf/game.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace dvrsfbf {

/// Where in the run a draw happens. Keys mirror the information
/// structure: one outer mini-batch per epoch, one sample per inner step.
enum class Phase : std::uint8_t {
  OuterBatch = 1,  // S_t draws at the epoch anchor x^t
  InnerStep = 2,   // single draw xi_{k+1/2,t}
  HalfBatch = 3,   // second mini-batch of the single-loop baseline
  Bias = 4,        // per-epoch perturbation of the sampling mean
  Auxiliary = 5,   // tests and estimators outside the solver
};

struct StreamKey {
  static constexpr std::int64_t kShared = -1;

  std::uint64_t replicate = 0;
  std::uint64_t epoch = 0;
  Phase phase = Phase::OuterBatch;
  std::uint64_t step = 0;  // inner index k for InnerStep
  std::int64_t agent = kShared;
};

/// 64-bit seed for `key` under `master_seed` (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t master_seed, const StreamKey& key);

/// Independent random stream. Equal (master_seed, key) pairs replay the
/// same sequence.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

Stream stream(std::uint64_t master_seed, const StreamKey& key);

class BatchSchedule {
 public:
  enum class Kind { Geometric, Polynomial, Constant };

  /// S_t = floor(eta^(-factor (t+1))).
  static BatchSchedule geometric(double eta, double factor);
  /// S_t = ceil(horizon^alpha_exp) for every t.
  static BatchSchedule polynomial(int horizon, double alpha_exp);
  static BatchSchedule constant(std::uint64_t size);

  Kind kind() const { return kind_; }
  double eta() const { return eta_; }
  double factor() const { return factor_; }
  int horizon() const { return horizon_; }
  double alpha_exp() const { return alpha_exp_; }

  /// Batch size at epoch t; always >= 1, saturating at 2^62.
  std::uint64_t size(int t) const;

 private:
  Kind kind_ = Kind::Constant;
  double eta_ = 0.0;
  double factor_ = 1.0;
  int horizon_ = 0;
  double alpha_exp_ = 0.0;
  std::uint64_t constant_ = 1;
};

std::uint64_t schedule_values(const BatchSchedule& schedule, int t);

/// Normal slope noise around `mean`, optionally re-centred every epoch.
struct NoiseModel {
  Eigen::VectorXd mean;
  double variance = 0.0;
  bool bias_injection = false;
  bool per_agent = false;

  static NoiseModel from_game(const GameInstance& game) { return {game.demand_slope_mean, game.slope_variance}; }
};

/// Uniform point in the ball of radius 1/sqrt(S_t) around model.mean.
Eigen::VectorXd inject_bias(const NoiseModel& model, int t, std::uint64_t batch_size, Stream& stream);

/// One realization: a shared m-vector, or m x N when draws are per agent.
/// The shared draw consumes m normals in market order.
SlopeDraw draw_slopes(const Eigen::VectorXd& mean, double variance, int columns, Stream& stream);

/// Running mean of S draws; mean_slopes is what the batch-averaged
/// operator is evaluated at.
struct SlopeBatch {
  SlopeDraw mean_slopes;
  std::uint64_t count = 0;
};

/// Mean of S slope realizations. The slopes are Gaussian, so the mean is
/// drawn directly from N(mean, variance / S) with one normal per entry;
/// S = 1 consumes exactly the draws of draw_slopes.
SlopeBatch draw_batch(const Eigen::VectorXd& mean, double variance, int columns, std::uint64_t S, Stream& stream);

/// Same distribution as draw_batch, but draws all S realizations and sums
/// them sequentially. O(S m); used to cross-check draw_batch.
SlopeBatch draw_batch_literal(const Eigen::VectorXd& mean, double variance, int columns, std::uint64_t S,
                              Stream& stream);

}  // namespace dvrsfbf
