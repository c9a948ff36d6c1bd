// Acceptance criteria. Each prints one PASS/FAIL line; names on the command
// line select a subset.

#include "oracles.hpp"

#include "dvrsfbf/distsim.hpp"
#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/experiment.hpp"
#include "dvrsfbf/metrics.hpp"
#include "dvrsfbf/refsolve.hpp"
#include "dvrsfbf/sampling.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace dvrsfbf;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "VIOLATED ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

const ComparisonRow& row_for(const std::vector<ComparisonRow>& rows, Algorithm a, int K = -1) {
  for (const auto& r : rows)
    if (r.algorithm == a && (K < 0 || r.K == K)) return r;
  throw ConfigError("missing comparison row");
}

// Replicate mean of ||x^t - x*||^2_Phi over the epochs every replicate has.
std::vector<double> mean_phi_distance(const RunSet& runs, const State& ref, const Eigen::VectorXd& phi_inv) {
  std::size_t len = runs.replicates.front().epochs.size();
  for (const auto& tr : runs.replicates) len = std::min(len, tr.epochs.size());
  std::vector<double> out(len, 0.0);
  for (const auto& tr : runs.replicates)
    for (std::size_t t = 0; t < len; ++t)
      out[t] += reference_distance_squared(tr.epochs[t].x, ref, &phi_inv) / runs.replicates.size();
  return out;
}

// Leading part of the series above the numerical floor.
std::vector<double> above_floor(const std::vector<double>& s) {
  std::vector<double> out;
  for (double v : s) {
    if (!(v > 1e-14 * s.front()) || !(v > 1e-28)) break;
    out.push_back(v);
  }
  return out;
}

Outcome table2() {
  ExperimentConfig c = preset("table2");
  c.cells.resize(1);  // (20, 7), eta = 0.99
  const auto rows = compare(c);
  const double d = row_for(rows, Algorithm::Dvrsfbf).oracles.median;
  const double v = row_for(rows, Algorithm::VrSmfbs).oracles.median;
  Outcome o;
  o.require(d >= 6.6e4 && d <= 6.6e6, "dvrsfbf median " + fmt("%.3g", d) + " in [6.6e4, 6.6e6]");
  o.require(v >= 1.4e7 && v <= 1.4e9, "vr-smfbs median " + fmt("%.3g", v) + " in [1.4e7, 1.4e9]");
  o.require(d / v <= 0.1, "ratio " + fmt("%.3g", d / v) + " <= 0.1");
  return o;
}

Outcome table4() {
  ExperimentConfig c = preset("table4");
  c.algorithm = Algorithm::Dvrsfbf;
  const auto rows = compare(c);
  const double k10 = row_for(rows, Algorithm::Dvrsfbf, 10).oracles.median;
  const double k20 = row_for(rows, Algorithm::Dvrsfbf, 20).oracles.median;
  const double k50 = row_for(rows, Algorithm::Dvrsfbf, 50).oracles.median;
  Outcome o;
  o.require(k20 < k10 && k20 < k50,
            "minimum at K=20 (" + fmt("%.3g", k10) + ", " + fmt("%.3g", k20) + ", " + fmt("%.3g", k50) + ")");
  o.require(k10 >= 2 * k20, "K=10 / K=20 = " + fmt("%.2f", k10 / k20) + " >= 2");
  o.require(k50 >= 2 * k20, "K=50 / K=20 = " + fmt("%.2f", k50 / k20) + " >= 2");
  return o;
}

Outcome linear_rate() {
  ExperimentConfig c = preset("table2");
  c.cells.clear();
  c.instance.players = 10;
  c.instance.markets = 5;
  c.instance.policy = MarketPolicy::Random;
  c.algorithm = Algorithm::Dvrsfbf;
  c.dvrsfbf_step = StepRule{};  // theory policy
  c.K = 0;                      // inner-length formula
  c.T = 600;
  c.stop_at_target = false;
  const Problem pr = build_problem(c);
  const ReferenceSolution ref = solve_reference(pr.game, pr.graph, 1e-10);
  const SolverParams p = solver_params(c, pr, Algorithm::Dvrsfbf);
  const StepPolicy pol = step_policy(pr.game, pr.analysis, pr.graph, Mode::StronglyMonotone);
  const double eta2 = std::pow(c.schedule.eta, c.schedule.factor);
  const double bound = std::max(pol.delta(p.K), eta2) + 0.05;

  const RunSet runs = run_replicates(c, pr, Algorithm::Dvrsfbf);
  const Eigen::VectorXd phi_inv = p.step.inverse_metric(pr.game);
  const std::vector<double> series = above_floor(mean_phi_distance(runs, ref.x, phi_inv));
  const RateFit fit = rate_fit(series);
  Outcome o;
  o.require(fit.factor <= bound, "fitted factor " + fmt("%.5f", fit.factor) + " <= max(delta, eta^2) + 0.05 = " +
                                     fmt("%.5f", bound) + " (K=" + std::to_string(p.K) + ")");
  o.require(fit.r_squared >= 0.9, "r^2 " + fmt("%.4f", fit.r_squared) + " >= 0.9 over " + std::to_string(series.size()) + " epochs");
  return o;
}

Outcome monotone_gap() {
  ExperimentConfig c = preset("fig3");
  const auto rows = gap_study(c);
  std::vector<double> mean;
  for (int T : c.gap.horizons) {
    double s = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.T == T) s += r.gap, ++n;
    mean.push_back(s / n);
  }
  Outcome o;
  std::string values;
  for (double m : mean) values += (values.empty() ? "" : ", ") + fmt("%.4g", m);
  o.require(mean[1] < mean[0] && mean[2] < mean[1], "decreasing gap (" + values + ")");
  for (std::size_t k = 1; k < mean.size(); ++k) {
    const double r = mean[k - 1] / mean[k];
    o.require(r >= 1.3 && r <= 3.0, "shrink " + fmt("%.2f", r) + " in [1.3, 3.0]");
  }
  return o;
}

Outcome deterministic_reduction() {
  GameInstance g = generate_cournot(5, 3, 0, MarketPolicy::Random);
  g.slope_variance = 0.0;
  g.finalize();
  const CommGraph graph = build_cycle(5, 1.0);
  SolverParams p;
  p.T = 4000;
  p.K = 1;
  p.schedule = BatchSchedule::constant(1);
  p.step = StepConfig::uniform(5, 0.5 / lipschitz_V(analyze(g), graph, g));
  p.step_override = true;
  const std::vector<State> fbf = deterministic_fbf(g, graph, p.step, p.T);
  const Trajectory a = dvrsfbf_run(g, graph, p, 2026);
  const Trajectory b = vr_smfbs_run(g, graph, p, 2026);
  bool same = a.epochs.size() == fbf.size() && b.epochs.size() == fbf.size();
  for (std::size_t t = 0; same && t < fbf.size(); ++t)
    same = (a.epochs[t].x.data().array() == fbf[t].data().array()).all() &&
           (b.epochs[t].x.data().array() == fbf[t].data().array()).all();
  const ReferenceSolution ref = solve_reference(g, graph, 1e-12);
  const double dist = std::sqrt(reference_distance_squared(a.final_state(), ref.x));
  Outcome o;
  o.require(same, "dvrsfbf and vr-smfbs bitwise equal to deterministic FBF over " + std::to_string(p.T) + " steps");
  o.require(dist <= 1e-6, "terminal distance " + fmt("%.2e", dist) + " <= 1e-6");
  return o;
}

double max_deviation(const Trajectory& a, const Trajectory& b) {
  if (a.epochs.size() != b.epochs.size()) return INFINITY;
  double gap = 0.0;
  for (std::size_t t = 0; t < a.epochs.size(); ++t)
    gap = std::max(gap, (a.epochs[t].x.data() - b.epochs[t].x.data()).lpNorm<Eigen::Infinity>());
  return gap;
}

Outcome distributed_equivalence() {
  ExperimentConfig c = preset("table2");
  c.cells.clear();
  c.T = 60;
  c.stop_at_target = false;
  const Problem pr = build_problem(c);
  const SolverParams p = solver_params(c, pr, Algorithm::Dvrsfbf);
  const Trajectory central = dvrsfbf_run(pr.game, pr.graph, p, c.seed);
  const auto one = dist::simulate(pr.game, pr.graph, p, c.seed, {1, false});
  const auto two = dist::simulate(pr.game, pr.graph, p, c.seed, {2, false});
  const auto all = dist::simulate(pr.game, pr.graph, p, c.seed, {0, false});
  const double dev = max_deviation(central, one.trajectory);
  Outcome o;
  o.require(dev <= 1e-12, "max per-epoch deviation " + fmt("%.2e", dev) + " <= 1e-12");
  o.require(max_deviation(one.trajectory, two.trajectory) == 0.0 &&
                max_deviation(one.trajectory, all.trajectory) == 0.0,
            "bit-identical with 1, 2 and " + std::to_string(pr.game.num_players()) + " workers");
  return o;
}

Outcome biased_oracle() {
  ExperimentConfig c = preset("table2");
  c.cells.resize(1);
  c.algorithm = Algorithm::Dvrsfbf;
  const Problem pr = build_problem(c);
  const ReferenceSolution ref = solve_reference(pr.game, pr.graph, 1e-10);
  const SolverParams p = solver_params(c, pr, Algorithm::Dvrsfbf);
  const Eigen::VectorXd phi_inv = p.step.inverse_metric(pr.game);
  const double eta2 = std::pow(c.schedule.eta, c.schedule.factor);
  const Contraction k =
      contraction_constants(p.step.alpha(), pr.analysis.mu, mean_lipschitz_estimate(pr.game, pr.graph), p.K, eta2);
  const double bound = std::max(k.delta, eta2) + 0.05 + 0.05;

  const RunSet clean = run_replicates(apply_cell(c, c.cells[0]), pr, Algorithm::Dvrsfbf);
  c.bias_injection = true;
  const RunSet biased = run_replicates(apply_cell(c, c.cells[0]), pr, Algorithm::Dvrsfbf);
  const OracleSummary s = summarize_oracles(biased, c.target_residual);
  const RateFit fb = rate_fit(above_floor(mean_phi_distance(biased, ref.x, phi_inv)));
  const RateFit fc = rate_fit(above_floor(mean_phi_distance(clean, ref.x, phi_inv)));
  Outcome o;
  o.require(s.reached == s.replicates, std::to_string(s.reached) + "/" + std::to_string(s.replicates) +
                                           " replicates reach res <= 1e-4 (median " + fmt("%.3g", s.median) + ")");
  o.require(fb.factor <= bound, "fitted factor " + fmt("%.5f", fb.factor) + " <= max(delta, eta^2) + 0.10 = " +
                                    fmt("%.5f", bound));
  o.require(fb.factor <= fc.factor + 0.05, "within 0.05 of the unbiased fit " + fmt("%.5f", fc.factor));
  return o;
}

Outcome dual_consensus() {
  const ExperimentConfig base = preset("table2");
  ExperimentConfig c = apply_cell(base, base.cells[0]);
  c.algorithm = Algorithm::Dvrsfbf;
  c.stop_at_target = false;  // runs until the T cap or the oracle budget
  const Problem pr = build_problem(c);
  const RunSet runs = run_replicates(c, pr, Algorithm::Dvrsfbf);
  const int N = pr.game.num_players(), m = pr.game.num_markets();
  double worst = 0.0;
  int last = 0;
  for (const auto& tr : runs.replicates) {
    last = std::max(last, tr.epochs.back().epoch);
    const Eigen::VectorXd y = tr.final_state().y();
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j) worst = std::max(worst, (y.segment(i * m, m) - y.segment(j * m, m)).norm());
  }
  Outcome o;
  o.require(worst < 1e-4, "max ||y_i - y_j|| " + fmt("%.2e", worst) + " < 1e-4 at the end of the run (epoch " + std::to_string(last) + ")");
  return o;
}

// Invariant suites -----------------------------------------------------------

Eigen::VectorXd uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> U(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& e : v) e = U(rng);
  return v;
}

State random_state(const GameInstance& g, std::mt19937_64& rng) {
  State x = State::zeros(g);
  x.data() = uniform(rng, x.size(), -2.0, 2.0);
  return x;
}

Outcome laplacian_spectrum() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<CommGraph> graphs{build_cycle(20, 1.0), build_cycle(7, 0.3), build_complete(6, 0.5)};
  for (int k = 0; k < 30; ++k) {
    const int N = 2 + k % 12;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j)
        if (j == i + 1 || U(rng) < 0.3) W(i, j) = W(j, i) = 0.05 + 0.95 * U(rng);
    graphs.push_back(validate(W));
  }
  Outcome o;
  bool ok = true;
  for (const auto& g : graphs) {
    const double delta = g.W.rowwise().sum().maxCoeff();
    const double sN = g.largest_eigenvalue();
    ok = ok && std::abs(g.eigenvalues(0)) <= 1e-10 && sN >= delta - 1e-9 && sN <= 2 * delta + 1e-9;
  }
  o.require(ok, "s_1 = 0 and s_N in [Delta, 2 Delta] on " + std::to_string(graphs.size()) + " graphs");
  return o;
}

Outcome operator_pairs() {
  const GameInstance g = generate_cournot(20, 7, 0, MarketPolicy::Shipped);
  const CommGraph graph = build_cycle(20, 1.0);
  const double lv = lipschitz_V(analyze(g), graph, g);
  std::mt19937_64 rng(2);
  double worst_mono = INFINITY, worst_lip = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const State a = random_state(g, rng), b = random_state(g, rng);
    const Eigen::VectorXd dv = apply_V(g, graph, a).data() - apply_V(g, graph, b).data();
    const Eigen::VectorXd dx = a.data() - b.data();
    worst_mono = std::min(worst_mono, dv.dot(dx) / dx.squaredNorm());
    worst_lip = std::max(worst_lip, dv.norm() / dx.norm());
  }
  Outcome o;
  o.require(worst_mono >= -1e-12, "min <V(a)-V(b), a-b>/|a-b|^2 = " + fmt("%.3g", worst_mono) + " >= 0");
  o.require(worst_lip <= lv * (1 + 1e-12), "max |V(a)-V(b)|/|a-b| = " + fmt("%.4g", worst_lip) +
                                               " <= ell_V = " + fmt("%.4g", lv));
  return o;
}

Outcome resolvent_pairs() {
  const GameInstance g = generate_cournot(20, 7, 0, MarketPolicy::Shipped);
  std::mt19937_64 rng(3);
  StepConfig step;
  step.gamma = uniform(rng, 20, 0.05, 0.5);
  step.sigma = uniform(rng, 20, 0.05, 0.5);
  step.tau = uniform(rng, 20, 0.05, 0.5);
  const Eigen::VectorXd phi_inv = step.inverse_metric(g);
  double worst = -INFINITY;
  for (int n = 0; n < 1000; ++n) {
    const State v = random_state(g, rng), w = random_state(g, rng);
    const Eigen::VectorXd a = resolvent_T(g, step, v).data() - resolvent_T(g, step, w).data();
    const Eigen::VectorXd b = v.data() - w.data();
    const double lhs = (a.array().square() / phi_inv.array()).sum();
    const double rhs = (a.array() * b.array() / phi_inv.array()).sum();
    worst = std::max(worst, lhs - rhs);
  }
  Outcome o;
  o.require(worst <= 1e-9, "max ||Jv-Jw||^2_Phi - <Jv-Jw, v-w>_Phi = " + fmt("%.2e", worst) + " <= 0");
  return o;
}

Outcome projection_oracle() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const GameInstance g = generate_cournot(2 + k % 2, 2, 100 + k, MarketPolicy::AllToAll);
    const Eigen::VectorXd w = uniform(rng, g.dim(), -1.0, 2.0).cwiseProduct(g.box_upper());
    worst = std::max(worst, (project_C(g, w).point - oracles::projection_oracle(g, w)).lpNorm<Eigen::Infinity>());
  }
  Outcome o;
  o.require(worst <= 1e-6, "project_C vs enumerated QP on 20 instances, max error " + fmt("%.2e", worst) + " <= 1e-6");
  return o;
}

Outcome refsolve_agreement() {
  double worst = 0.0;
  int count = 0;
  for (int k = 0; k < 10; ++k) {
    const GameInstance g = generate_cournot(3 + k % 3, 2 + k % 2, 300 + k, MarketPolicy::Random);
    if (g.dim() + g.num_markets() > 20) continue;
    const CommGraph graph = build_cycle(g.num_players(), 1.0);
    const ReferenceSolution it = solve_reference(g, graph, 1e-11);
    const ReferenceSolution en = active_set_enumeration(g, graph);
    worst = std::max({worst, (it.x.u() - en.x.u()).lpNorm<Eigen::Infinity>(),
                      (it.x.y() - en.x.y()).lpNorm<Eigen::Infinity>()});
    ++count;
  }
  Outcome o;
  o.require(count >= 5 && worst <= 1e-7, "iterative vs enumeration on " + std::to_string(count) +
                                             " instances, max error " + fmt("%.2e", worst) + " <= 1e-7");
  return o;
}

Outcome oracle_accounting() {
  const GameInstance g = generate_cournot(5, 3, 7, MarketPolicy::AllToAll);
  const CommGraph graph = build_cycle(5, 1.0);
  SolverParams p;
  p.T = 60;
  p.K = 7;
  p.schedule = BatchSchedule::geometric(0.95, 2.0);
  p.step = StepConfig::uniform(5, 0.5 / lipschitz_V(analyze(g), graph, g));
  p.step_override = true;
  std::uint64_t sum = 0;
  for (int t = 0; t < p.T; ++t) sum += p.schedule.size(t);
  const Trajectory a = dvrsfbf_run(g, graph, p, 1);
  const Trajectory b = vr_smfbs_run(g, graph, p, 1);
  Outcome o;
  o.require(a.total_oracles == sum + 2ULL * p.K * p.T,
            "dvrsfbf " + std::to_string(a.total_oracles) + " = sum S_t + 2KT = " +
                std::to_string(sum + 2ULL * p.K * p.T));
  o.require(b.total_oracles == 2 * sum, "vr-smfbs " + std::to_string(b.total_oracles) + " = 2 sum S_t");
  return o;
}

Outcome estimator_slope() {
  const GameInstance g = generate_cournot(5, 3, 7, MarketPolicy::AllToAll);
  const CommGraph graph = build_cycle(5, 1.0);
  std::mt19937_64 rng(6);
  const State x = random_state(g, rng);
  const Eigen::VectorXd exact = apply_V(g, graph, x).data();
  std::vector<double> lx, ly;
  for (int S : {4, 16, 64, 256, 1024}) {
    const int reps = 400;
    double err = 0.0;
    for (int r = 0; r < reps; ++r) {
      Stream st = stream(6, StreamKey{static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(S), Phase::Auxiliary,
                                      0, StreamKey::kShared});
      std::vector<SlopeDraw> batch;
      for (int n = 0; n < S; ++n) batch.push_back(draw_slopes(g.demand_slope_mean, g.slope_variance, 1, st));
      err += (vr_estimate(g, graph, x, batch).value.data() - exact).norm() / reps;
    }
    lx.push_back(std::log(double(S)));
    ly.push_back(std::log(err));
  }
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) mx += lx[k] / lx.size(), my += ly[k] / ly.size();
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) sxy += (lx[k] - mx) * (ly[k] - my), sxx += (lx[k] - mx) * (lx[k] - mx);
  const double slope = sxy / sxx;
  Outcome o;
  o.require(std::abs(slope + 0.5) <= 0.1, "log-log slope " + fmt("%.3f", slope) + " in -0.5 +- 0.1");
  return o;
}

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
  double limit_s = 0.0;  // runtime bound, 0 when none
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"table2", table2, 0},
      {"table4", table4, 0},
      {"linear_rate", linear_rate, 300},
      {"monotone_gap", monotone_gap, 600},
      {"deterministic_reduction", deterministic_reduction, 0},
      {"distributed_equivalence", distributed_equivalence, 0},
      {"biased_oracle", biased_oracle, 0},
      {"dual_consensus", dual_consensus, 0},
      {"invariants/laplacian", laplacian_spectrum, 60},
      {"invariants/operator", operator_pairs, 60},
      {"invariants/resolvent", resolvent_pairs, 60},
      {"invariants/projection", projection_oracle, 60},
      {"invariants/refsolve", refsolve_agreement, 60},
      {"invariants/oracle_count", oracle_accounting, 60},
      {"invariants/estimator", estimator_slope, 60},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  auto selected = [&](const std::string& name) {
    if (wanted.empty()) return true;
    for (const auto& w : wanted)
      if (name == w || name.rfind(w + "/", 0) == 0) return true;
    return false;
  };

  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!selected(c.name)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0) o.require(secs < c.limit_s, "runtime " + fmt("%.1f", secs) + " s < " + fmt("%.0f", c.limit_s) + " s");
    std::printf("%s %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matches\n");
    return 2;
  }
  return failed ? 1 : 0;
}
