#include "dvrsfbf/sampling.hpp"

#include "dvrsfbf/errors.hpp"

#include <cmath>
#include <limits>

namespace dvrsfbf {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kMaxBatch = std::uint64_t{1} << 62;

}  // namespace

std::uint64_t derive_seed(std::uint64_t master_seed, const StreamKey& key) {
  std::uint64_t h = splitmix64(master_seed ^ 0x5eedf00dcafe1234ULL);
  h = splitmix64(h ^ key.replicate);
  h = splitmix64(h ^ key.epoch);
  h = splitmix64(h ^ static_cast<std::uint64_t>(key.phase));
  h = splitmix64(h ^ key.step);
  h = splitmix64(h ^ static_cast<std::uint64_t>(key.agent));
  return h;
}

Stream stream(std::uint64_t master_seed, const StreamKey& key) { return Stream(derive_seed(master_seed, key)); }

BatchSchedule BatchSchedule::geometric(double eta, double factor) {
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("geometric schedule: eta must lie in (0,1)");
  if (!(factor > 0.0)) throw ConfigError("geometric schedule: exponent factor must be positive");
  BatchSchedule s;
  s.kind_ = Kind::Geometric;
  s.eta_ = eta;
  s.factor_ = factor;
  return s;
}

BatchSchedule BatchSchedule::polynomial(int horizon, double alpha_exp) {
  if (horizon < 1) throw ConfigError("polynomial schedule: horizon must be >= 1");
  if (!(alpha_exp >= 0.0)) throw ConfigError("polynomial schedule: alpha_exp must be >= 0");
  BatchSchedule s;
  s.kind_ = Kind::Polynomial;
  s.horizon_ = horizon;
  s.alpha_exp_ = alpha_exp;
  return s;
}

BatchSchedule BatchSchedule::constant(std::uint64_t size) {
  if (size < 1) throw ConfigError("constant schedule: size must be >= 1");
  BatchSchedule s;
  s.kind_ = Kind::Constant;
  s.constant_ = size;
  return s;
}

std::uint64_t BatchSchedule::size(int t) const {
  if (t < 0) throw ConfigError("batch schedule: negative epoch");
  double v = 1.0;
  switch (kind_) {
    case Kind::Geometric:
      v = std::floor(std::pow(eta_, -factor_ * (t + 1.0)));
      break;
    case Kind::Polynomial:
      v = std::ceil(std::pow(static_cast<double>(horizon_), alpha_exp_));
      break;
    case Kind::Constant:
      return constant_;
  }
  if (!(v < static_cast<double>(kMaxBatch))) return kMaxBatch;
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(v));
}

std::uint64_t schedule_values(const BatchSchedule& schedule, int t) { return schedule.size(t); }

Eigen::VectorXd inject_bias(const NoiseModel& model, int, std::uint64_t batch_size, Stream& stream) {
  if (batch_size < 1) throw ConfigError("inject_bias: batch size must be >= 1");
  const auto dim = model.mean.size();
  const double radius = 1.0 / std::sqrt(static_cast<double>(batch_size));
  Eigen::VectorXd dir(dim);
  for (Eigen::Index j = 0; j < dim; ++j) dir(j) = stream.normal();
  const double norm = dir.norm();
  if (norm == 0.0) return model.mean;
  const double scale = radius * std::pow(stream.uniform(), 1.0 / static_cast<double>(dim));
  return model.mean + (scale / norm) * dir;
}

SlopeDraw draw_slopes(const Eigen::VectorXd& mean, double variance, int columns, Stream& stream) {
  const double sd = std::sqrt(variance);
  SlopeDraw d;
  d.slopes.resize(mean.size(), columns);
  for (int c = 0; c < columns; ++c)
    for (Eigen::Index j = 0; j < mean.size(); ++j) d.slopes(j, c) = mean(j) + sd * stream.normal();
  return d;
}

SlopeBatch draw_batch(const Eigen::VectorXd& mean, double variance, int columns, std::uint64_t S, Stream& stream) {
  if (S < 1) throw ConfigError("draw_batch: empty batch");
  SlopeBatch b;
  b.count = S;
  b.mean_slopes = draw_slopes(mean, variance / static_cast<double>(S), columns, stream);
  return b;
}

SlopeBatch draw_batch_literal(const Eigen::VectorXd& mean, double variance, int columns, std::uint64_t S,
                              Stream& stream) {
  if (S < 1) throw ConfigError("draw_batch: empty batch");
  const double sd = std::sqrt(variance);
  const Eigen::Index m = mean.size();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, columns);
  for (std::uint64_t s = 0; s < S; ++s)
    for (int c = 0; c < columns; ++c)
      for (Eigen::Index j = 0; j < m; ++j) sum(j, c) += mean(j) + sd * stream.normal();
  SlopeBatch b;
  b.count = S;
  b.mean_slopes.slopes = sum / static_cast<double>(S);
  return b;
}

}  // namespace dvrsfbf
