#include "dvrsfbf/metrics.hpp"

#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/sampling.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvrsfbf {

namespace {

constexpr int kMaxSweeps = 100000;

struct RowSet {
  std::vector<std::vector<int>> cols;  // columns of each capacity row
};

RowSet capacity_rows(const GameInstance& game) {
  RowSet r;
  r.cols.assign(game.num_markets(), {});
  for (int c = 0; c < game.dim(); ++c) r.cols[game.column_market(c)].push_back(c);
  return r;
}

double projection_kkt(const GameInstance& game, const RowSet& rows, const Eigen::VectorXd& w,
                      const Eigen::VectorXd& x, const Eigen::VectorXd& lambda, const Eigen::VectorXd& theta) {
  // x must equal clamp(w - A'lambda) with lambda >= 0 complementary to b - A x >= 0.
  Eigen::VectorXd shifted = w;
  double worst = 0.0;
  for (int j = 0; j < game.num_markets(); ++j) {
    double ax = 0.0;
    for (int c : rows.cols[j]) {
      shifted(c) -= lambda(j);
      ax += x(c);
    }
    const double slack = game.capacity(j) - ax;
    worst = std::max(worst, -slack);
    worst = std::max(worst, -lambda(j));
    worst = std::max(worst, std::abs(lambda(j) * slack));
  }
  const Eigen::VectorXd clamped = shifted.cwiseMax(0.0).cwiseMin(theta);
  worst = std::max(worst, (clamped - x).cwiseAbs().maxCoeff());
  worst = std::max(worst, (-x).maxCoeff());
  worst = std::max(worst, (x - theta).maxCoeff());
  return worst;
}

}  // namespace

Projection project_C(const GameInstance& game, const Eigen::VectorXd& w, double tol) {
  if (!(tol > 0.0)) throw ConfigError("project_C: tol must be positive");
  const int d = game.dim();
  const int m = game.num_markets();
  if (w.size() != d) throw ConfigError("project_C: dimension mismatch");
  const RowSet rows = capacity_rows(game);
  const Eigen::VectorXd theta = game.box_upper();

  Eigen::VectorXd x = w;
  Eigen::VectorXd box_inc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd row_inc = Eigen::VectorXd::Zero(m);  // halfspace increments are multiples of a_j
  Eigen::VectorXd z(d), prev(d);

  Projection out;
  for (int sweep = 1; sweep <= kMaxSweeps; ++sweep) {
    prev = x;
    z = x + box_inc;
    x = z.cwiseMax(0.0).cwiseMin(theta);
    box_inc = z - x;
    for (int j = 0; j < m; ++j) {
      const auto& cols = rows.cols[j];
      // z = x + row_inc_j * a_j, then project onto a_j'u <= b_j.
      double az = 0.0;
      for (int c : cols) az += x(c) + row_inc(j);
      const double viol = az - game.capacity(j);
      const double coef = viol > 0.0 ? viol / static_cast<double>(cols.size()) : 0.0;
      for (int c : cols) x(c) += row_inc(j) - coef;
      row_inc(j) = coef;
    }
    if ((x - prev).norm() < tol) {
      out.kkt_residual = projection_kkt(game, rows, w, x, row_inc, theta);
      if (out.kkt_residual <= 10.0 * tol) {
        out.point = std::move(x);
        out.multipliers = std::move(row_inc);
        out.sweeps = sweep;
        return out;
      }
    }
  }
  throw NumericalError("project_C: Dykstra did not converge within 1e5 sweeps");
}

double residual(const GameInstance& game, const CommGraph& graph, const State& x, const StepConfig& step) {
  const int d = game.dim();
  const int m = game.num_markets();
  const Eigen::VectorXd F = pseudogradient(game, x.u());
  Eigen::VectorXd w(d);
  for (int c = 0; c < d; ++c) {
    const int i = game.column_player(c);
    w(c) = x.u()(c) - step.gamma(i) * (F(c) + x.y()(i * m + game.column_market(c)));
  }
  (void)graph;
  return (project_C(game, w, 1e-12).point - x.u()).norm();
}

double merit_integrand(const GameInstance& game, const CommGraph& graph, const State& x, const State& z) {
  return apply_V(game, graph, x).data().dot(z.data() - x.data());
}

namespace {

// X = box x R^{Nm} x R^{Nm}_{>=0}.
void project_X(const GameInstance& game, Eigen::VectorXd& v, int d, int nm) {
  for (int i = 0; i < game.num_players(); ++i) {
    auto seg = v.segment(game.offset(i), game.players[i].dim());
    seg = seg.cwiseMax(0.0).cwiseMin(game.players[i].box_upper);
  }
  v.segment(d + nm, nm) = v.segment(d + nm, nm).cwiseMax(0.0);
}

// Exact projection onto X intersect ball. For a ball multiplier mu the
// problem separates into an X-projection of (v + mu c)/(1 + mu); mu is
// found by bisection on the distance to the centre.
Eigen::VectorXd project_feasible(const GameInstance& game, const Eigen::VectorXd& v, const Eigen::VectorXd& center,
                                 double radius, int d, int nm) {
  auto at = [&](double mu) {
    Eigen::VectorXd x = (v + mu * center) / (1.0 + mu);
    project_X(game, x, d, nm);
    return x;
  };
  Eigen::VectorXd x = at(0.0);
  if ((x - center).norm() <= radius) return x;
  double lo = 0.0, hi = 1.0;
  while ((at(hi) - center).norm() > radius) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e15) return at(hi);  // centre outside X and ball misses X
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    ((at(mid) - center).norm() > radius ? lo : hi) = mid;
  }
  return at(hi);
}

}  // namespace

GapReport gap_estimate(const GameInstance& game, const CommGraph& graph, const State& z, const GapSpec& spec,
                       std::vector<std::pair<State, double>>* probe_log) {
  if (!(spec.radius > 0.0)) throw ConfigError("gap_estimate: radius must be positive");
  const int d = game.dim();
  const int nm = game.num_players() * game.num_markets();
  if (z.size() != d + 2 * nm || spec.center.size() != z.size()) throw ConfigError("gap_estimate: dimension mismatch");

  GapReport report;
  const Eigen::VectorXd theta = game.box_upper();
  if ((z.u().array() < -1e-12).any() || (z.u().array() > theta.array() + 1e-12).any() ||
      (z.y().array() < -1e-12).any()) {
    report.value = std::numeric_limits<double>::infinity();
    return report;
  }

  const Eigen::MatrixXd B = dense_V_matrix(game, graph);
  const Eigen::VectorXd c = apply_V(game, graph, State::zeros(game)).data();
  const Eigen::VectorXd& zd = z.data();
  const Eigen::VectorXd& xc = spec.center.data();
  const double C = spec.radius;

  const Eigen::MatrixXd H = B + B.transpose();
  const double curvature = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
  const double step = 1.0 / std::max(curvature, 1e-3 * std::max(1.0, B.norm()));

  double best = -std::numeric_limits<double>::infinity();
  auto evaluate = [&](const Eigen::VectorXd& x) {
    const double q = (B * x + c).dot(zd - x);
    ++report.probes;
    if (probe_log) {
      State s = State::zeros(game);
      s.data() = x;
      probe_log->emplace_back(std::move(s), q);
    }
    best = std::max(best, q);
    return q;
  };

  report.center_contains_point = (zd - xc).norm() <= C;
  if (report.center_contains_point) evaluate(zd);

  Stream rng = stream(spec.seed, StreamKey{0, 0, Phase::Auxiliary, 0, StreamKey::kShared});
  auto random_point = [&]() {
    Eigen::VectorXd dir(zd.size());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = rng.normal();
    const double r = C * std::pow(rng.uniform(), 1.0 / static_cast<double>(dir.size()));
    return project_feasible(game, xc + (r / dir.norm()) * dir, xc, C, d, nm);
  };

  std::vector<Eigen::VectorXd> starts;
  starts.push_back(project_feasible(game, zd, xc, C, d, nm));
  starts.push_back(xc);
  while (static_cast<int>(starts.size()) < std::max(2, spec.starts)) starts.push_back(random_point());

  // Q(., z) is concave because V is monotone, so accelerated projected
  // ascent with adaptive restart converges to the sup from any start.
  auto ascent = [&](const Eigen::VectorXd& x) { return B.transpose() * (zd - x) - (B * x + c); };
  for (auto x : starts) {
    evaluate(x);
    Eigen::VectorXd yk = x;
    double t = 1.0;
    for (int it = 0; it < spec.iterations; ++it) {
      const Eigen::VectorXd g = ascent(yk);
      const Eigen::VectorXd next = project_feasible(game, yk + step * g, xc, C, d, nm);
      const double moved = (next - x).norm();
      if (g.dot(next - x) < 0.0) {
        t = 1.0;
        yk = next;
      } else {
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        yk = next + ((t - 1.0) / tn) * (next - x);
        t = tn;
      }
      x = next;
      const bool done = moved <= 1e-13 * (1.0 + x.norm());
      if (done || it % 10 == 9 || it + 1 == spec.iterations) evaluate(x);
      if (done) break;
    }
  }
  for (int k = 0; k < spec.random_probes; ++k) evaluate(random_point());

  report.value = best;
  return report;
}

RateFit rate_fit(std::span<const double> series) {
  if (series.size() < 10) throw ConfigError("rate_fit: need at least 10 points");
  for (double v : series)
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("rate_fit: series must be positive and finite");
  const double n = static_cast<double>(series.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    const double x = static_cast<double>(t);
    const double y = std::log(series[t]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  RateFit fit;
  const double cov = sxy - sx * sy / n;
  const double varx = sxx - sx * sx / n;
  const double vary = syy - sy * sy / n;
  fit.slope = cov / varx;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.factor = std::exp(fit.slope);
  fit.r_squared = vary > 0.0 ? (cov * cov) / (varx * vary) : 1.0;
  return fit;
}

TrendTest kendall_trend(std::span<const double> series) {
  const auto n = static_cast<long long>(series.size());
  TrendTest out;
  if (n < 2) return out;
  long long concordant = 0;
  for (long long i = 0; i < n; ++i)
    for (long long j = i + 1; j < n; ++j) {
      if (series[j] > series[i]) ++concordant;
      else if (series[j] < series[i]) --concordant;
    }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  out.tau = static_cast<double>(concordant) / pairs;
  const double var = static_cast<double>(n) * (n - 1) * (2.0 * n + 5) / 18.0;
  out.z_score = static_cast<double>(concordant) / std::sqrt(var);
  return out;
}

}  // namespace dvrsfbf
