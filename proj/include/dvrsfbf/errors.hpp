#pragma once

#include <stdexcept>
#include <string>

namespace dvrsfbf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid sizes, malformed files, inconsistent options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite state, failed projection, or a violated step-size inequality.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int epoch = -1, int step = -1)
      : Error(what), epoch_(epoch), step_(step) {}
  int epoch() const { return epoch_; }
  int step() const { return step_; }

 private:
  int epoch_;
  int step_;
};

class BudgetExceeded : public Error {
 public:
  BudgetExceeded(const std::string& what, double best)
      : Error(what), best_(best) {}
  /// Best value of the monitored quantity when the budget ran out.
  double best() const { return best_; }

 private:
  double best_;
};

class GraphError : public Error {
 public:
  enum class Kind { AsymmetricW, DisconnectedGraph, WeightOutOfRange, NotSquare };

  GraphError(Kind kind, int i, int j, const std::string& what)
      : Error(what), kind_(kind), i_(i), j_(j) {}
  Kind kind() const { return kind_; }
  int first() const { return i_; }
  int second() const { return j_; }

 private:
  Kind kind_;
  int i_;
  int j_;
};

}  // namespace dvrsfbf
