#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/experiment.hpp"
#include "dvrsfbf/io.hpp"
#include "dvrsfbf/refsolve.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace dvrsfbf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kBudget = 4 };

struct Options {
  std::string preset;
  std::string config;
  std::string output;
  std::optional<std::string> name;
  std::optional<int> players, markets, T, K, replicates, threads, cadence;
  std::optional<std::uint64_t> instance_seed, seed, budget;
  std::optional<std::string> policy, instance, topology, edges, algorithm, mode;
  std::optional<double> eta, exponent, weight, target;
  bool monotone_variant = false;
  bool no_stop = false;
  bool bias = false;
  bool distributed = false;
  bool gap = false;
};

void add_common(CLI::App* app, Options& o) {
  app->add_option("--preset", o.preset, "table2 | table3 | table4 | fig2 | fig3");
  app->add_option("--config", o.config, "JSON config file (// comments allowed); applied after --preset");
  app->add_option("-N,--players", o.players, "number of firms");
  app->add_option("-m,--markets", o.markets, "number of markets");
  app->add_option("--instance-seed", o.instance_seed, "generator seed");
  app->add_option("--policy", o.policy, "market incidence: shipped (20 x 7 only) | random | all-to-all; random when -N/-m leave 20 x 7");
  app->add_option("--instance", o.instance, "instance JSON file instead of the generator");
  app->add_flag("--monotone-variant", o.monotone_variant, "zero the quadratic costs");
  app->add_option("--topology", o.topology, "communication graph: cycle | complete");
  app->add_option("--weight", o.weight, "edge weight in (0, 1]");
  app->add_option("--edges", o.edges, "edge-list file (i j w per line)");
  app->add_option("--seed", o.seed, "master seed of the sampling streams");
  app->add_option("-T", o.T, "outer epochs");
  app->add_option("-K", o.K, "inner steps (0: inner-length formula)");
  app->add_option("--eta", o.eta, "geometric batch-growth parameter");
  app->add_option("--exponent", o.exponent, "polynomial batch exponent");
  app->add_option("--replicates", o.replicates, "independent replicates");
  app->add_option("--algorithm", o.algorithm, "dvrsfbf | vr-smfbs | both");
  app->add_option("--mode", o.mode, "strongly-monotone | monotone");
  app->add_option("--target", o.target, "target residual");
  app->add_flag("--no-stop", o.no_stop, "run all T epochs instead of stopping at the target");
  app->add_option("--cadence", o.cadence, "epochs between residual checks");
  app->add_option("--budget", o.budget, "oracle budget per run");
  app->add_flag("--bias", o.bias, "biased sampling mean");
  app->add_flag("--distributed", o.distributed, "run through the message-passing simulation");
  app->add_option("--threads", o.threads, "replicate threads (0: hardware)");
  app->add_option("--name", o.name, "output file prefix");
  app->add_option("-o,--output", o.output, "output directory (default $DVRSFBF_OUTPUT_DIR or ./results)");
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

// Preset, then config file, then flags. Flags that pick the instance or a
// swept parameter drop the preset's cells.
ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c;
  if (!o.preset.empty()) c = preset(o.preset);
  if (!o.config.empty()) c = config_from_json(read_config_file(o.config), c);
  if (o.players || o.markets || o.policy || o.instance || o.eta || o.exponent || o.K) c.cells.clear();
  if (o.name) c.name = *o.name;
  if (o.players) c.instance.players = *o.players;
  if (o.markets) c.instance.markets = *o.markets;
  if (o.instance_seed) c.instance.seed = *o.instance_seed;
  if (o.policy) c.instance.policy = parse_market_policy(*o.policy);
  else if (c.instance.policy == MarketPolicy::Shipped && (c.instance.players != 20 || c.instance.markets != 7))
    c.instance.policy = MarketPolicy::Random;
  if (o.instance) c.instance.file = *o.instance;
  if (o.monotone_variant) c.instance.monotone_variant = true;
  if (o.topology) c.graph.topology = *o.topology;
  if (o.weight) c.graph.weight = *o.weight;
  if (o.edges) c.graph.edge_file = *o.edges;
  if (o.seed) c.seed = *o.seed;
  if (o.T) c.T = *o.T;
  if (o.K) c.K = *o.K;
  if (o.eta) c.schedule.eta = *o.eta;
  if (o.exponent) c.schedule.exponent = *o.exponent;
  if (o.replicates) c.replicates = *o.replicates;
  if (o.algorithm) c.algorithm = parse_algorithm(*o.algorithm);
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.target) c.target_residual = *o.target;
  if (o.no_stop) c.stop_at_target = false;
  if (o.cadence) c.cadence = *o.cadence;
  if (o.budget) c.oracle_budget = *o.budget;
  if (o.bias) c.bias_injection = true;
  if (o.distributed) c.distributed = true;
  if (o.threads) c.threads = *o.threads;
  if (c.mode == Mode::Monotone) {
    c.dvrsfbf_step = StepRule{};
    c.baseline_step = StepRule{};
    if (c.schedule.kind == ScheduleSpec::Kind::Geometric) c.schedule.kind = ScheduleSpec::Kind::Polynomial;
  }
  c.validate();
  return c;
}

fs::path output_dir(const Options& o) {
  if (!o.output.empty()) return o.output;
  if (const char* env = std::getenv("DVRSFBF_OUTPUT_DIR"); env && *env) return env;
  return "results";
}

std::vector<Algorithm> algorithms(const ExperimentConfig& c) {
  if (c.algorithm == Algorithm::Both) return {Algorithm::Dvrsfbf, Algorithm::VrSmfbs};
  return {c.algorithm};
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

void print_analysis(const ExperimentConfig& c, const Problem& pr) {
  std::printf("instance     N=%d m=%d (%s)\n", pr.game.num_players(), pr.game.num_markets(),
              c.instance.file.empty() ? to_string(c.instance.policy).c_str() : c.instance.file.c_str());
  std::printf("graph        %d nodes, s_N=%.6g\n", pr.graph.size(), pr.graph.largest_eigenvalue());
  std::printf("mu           %.6g%s\n", pr.analysis.mu, pr.analysis.is_strongly_monotone ? "" : " (merely monotone)");
  std::printf("ell          %.6g\n", pr.analysis.ell);
  std::printf("ell_V        %.6g\n", pr.ell_V);
  if (!pr.analysis.is_strongly_monotone) return;
  const StepPolicy pol = step_policy(pr.game, pr.analysis, pr.graph, Mode::StronglyMonotone);
  const double eta_eff = std::pow(c.schedule.eta, c.schedule.factor);
  const int K = optimal_inner_length(pol.q, pol.rho, eta_eff);
  std::printf("theory step  %.6g (L-hat %.6g)\n", pol.alpha, pol.lipschitz);
  std::printf("q, rho       %.6g, %.6g\n", pol.q, pol.rho);
  std::printf("recommended  K=%d (delta=%.6g at eta^%g=%.6g)\n", K, pol.delta(K), c.schedule.factor, eta_eff);
  std::printf("configured   K=%d (delta=%.6g)\n", c.K, c.K > 0 ? pol.delta(c.K) : pol.delta(K));
}

int cmd_generate(const Options& o, const std::string& file) {
  const ExperimentConfig c = resolve(o);
  const Problem pr = build_problem(c);
  const fs::path path = file.empty() ? output_dir(o) / (c.name + "_instance.json") : fs::path(file);
  write_atomic(path, instance_to_json(pr.game).dump(2) + "\n");
  print_analysis(c, pr);
  std::printf("wrote        %s (fnv1a64 %016llx)\n", path.string().c_str(),
              static_cast<unsigned long long>(fnv1a64(instance_to_json(pr.game).dump())));
  return kOk;
}

// Residual of the running average z-bar^t, one row per epoch.
void write_average_csv(std::ostream& out, const Trajectory& tr, const Problem& pr, double alpha) {
  out << "epoch,residual_avg\n";
  out.precision(10);
  for (std::size_t t = 0; t < tr.epoch_averages.size(); ++t)
    out << t + 1 << "," << fixed_point_residual(pr.game, pr.graph, tr.epoch_averages[t], alpha) << "\n";
}

int cmd_run(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const Problem pr = build_problem(c);
  const fs::path dir = output_dir(o);
  std::optional<ReferenceSolution> ref;
  try {
    ref = solve_reference(pr.game, pr.graph, 1e-10);
  } catch (const BudgetExceeded& e) {
    std::fprintf(stderr, "warning: no reference solution (%s); dist_to_ref left empty\n", e.what());
  }
  RunContext ctx;
  if (ref) ctx.reference = &ref->x;

  json meta = run_metadata(c);
  bool exhausted = false;
  for (Algorithm a : algorithms(c)) {
    RunSet runs;
    runs.algorithm = a;
    if (c.T == 0) {
      runs.replicates.resize(static_cast<std::size_t>(c.replicates));
    } else {
      runs = run_replicates(c, pr, a, ctx);
    }
    const std::string stem = c.name + "_" + to_string(a);
    const SolverParams params = solver_params(c, pr, a);
    const double res_alpha = c.residual_step ? *c.residual_step : params.step.alpha();
    json summary = json::array();
    for (std::size_t r = 0; r < runs.replicates.size(); ++r) {
      const Trajectory& tr = runs.replicates[r];
      write_atomic(dir / (stem + "_rep" + std::to_string(r) + ".csv"),
                   render([&](std::ostream& s) { write_trajectory_csv(s, tr); }));
      if (c.mode == Mode::Monotone && !tr.epoch_averages.empty())
        write_atomic(dir / (stem + "_rep" + std::to_string(r) + "_avg.csv"),
                     render([&](std::ostream& s) { write_average_csv(s, tr, pr, res_alpha); }));
      exhausted = exhausted || tr.budget_exhausted;
      summary.push_back({{"replicate", r},
                         {"epochs", tr.epochs.empty() ? 0 : tr.epochs.back().epoch},
                         {"oracles", tr.total_oracles},
                         {"reached_target", tr.reached_target},
                         {"budget_exhausted", tr.budget_exhausted}});
    }
    write_atomic(dir / (stem + "_mean.csv"), render([&](std::ostream& s) { write_mean_csv(s, runs); }));
    meta["runs"][to_string(a)] = {{"K", params.K}, {"alpha", params.step.alpha()}, {"replicates", summary}};
    if (c.T == 0) continue;
    const OracleSummary os = summarize_oracles(runs, c.target_residual);
    std::printf("%-9s K=%-5d reached %d/%d  median oracles to %.0e: %s\n", to_string(a).c_str(), params.K,
                os.reached, os.replicates, c.target_residual, format_oracles(os, c.oracle_budget).c_str());
  }
  if (c.mode == Mode::Monotone && !c.gap.horizons.empty() && c.T > 0) {
    const auto rows = gap_study(c);
    write_atomic(dir / (c.name + "_gap.csv"), render([&](std::ostream& s) { write_gap_csv(s, rows); }));
    for (int T : c.gap.horizons) {
      double mean = 0;
      int n = 0;
      for (const auto& r : rows)
        if (r.T == T) mean += r.gap, ++n;
      std::printf("gap          T=%-5d mean %.4g over %d replicates\n", T, mean / std::max(1, n), n);
    }
  }
  write_atomic(dir / (c.name + "_meta.json"), meta.dump(2) + "\n");
  std::printf("outputs in   %s\n", dir.string().c_str());
  return exhausted ? kBudget : kOk;
}

int cmd_compare(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const auto rows = compare(c);
  const fs::path dir = output_dir(o);
  write_atomic(dir / (c.name + "_compare.csv"), render([&](std::ostream& s) { write_comparison_csv(s, rows); }));
  write_atomic(dir / (c.name + "_meta.json"), run_metadata(c).dump(2) + "\n");
  std::printf("%-24s %-5s %-9s %8s %s\n", "cell", "K", "algorithm", "reached", "oracles");
  for (const auto& r : rows)
    std::printf("%-24s %-5d %-9s %4d/%-3d %s\n", r.cell.c_str(), r.K, to_string(r.algorithm).c_str(),
                r.oracles.reached, r.oracles.replicates, format_oracles(r.oracles, r.budget).c_str());
  std::printf("outputs in   %s\n", dir.string().c_str());
  return kOk;
}

int cmd_analyze(const Options& o, bool example) {
  if (example) {
    std::fputs(example_config().c_str(), stdout);
    return kOk;
  }
  const ExperimentConfig c = resolve(o);
  const Problem pr = build_problem(c);
  print_analysis(c, pr);
  const ReferenceSolution ref = solve_reference(pr.game, pr.graph, 1e-10);
  std::printf("reference    %s, residual %.3g, total output %.6g\n", ref.method.c_str(), ref.residual,
              ref.x.data().head(pr.game.dim()).sum());
  if (o.gap) {
    ExperimentConfig g = c;
    if (g.mode != Mode::Monotone) throw ConfigError("--gap needs --mode monotone");
    const auto rows = gap_study(g);
    write_atomic(output_dir(o) / (c.name + "_gap.csv"), render([&](std::ostream& s) { write_gap_csv(s, rows); }));
    for (const auto& r : rows) std::printf("gap T=%d replicate %d: %.6g\n", r.T, r.replicate, r.gap);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed variance-reduced stochastic FBF for networked Cournot games"};
  app.require_subcommand(1);
  Options o;
  std::string instance_out;
  bool example = false;

  auto* gen = app.add_subcommand("generate", "write a seeded instance and print its analysis");
  add_common(gen, o);
  gen->add_option("--file", instance_out, "instance path (default <output>/<name>_instance.json)");

  auto* run = app.add_subcommand("run", "run replicates and write trajectory CSVs");
  add_common(run, o);

  auto* cmp = app.add_subcommand("compare", "oracles to the target residual, per cell and algorithm");
  add_common(cmp, o);

  auto* ana = app.add_subcommand("analyze", "constants, recommended K and the reference solution");
  add_common(ana, o);
  ana->add_flag("--gap", o.gap, "run the monotone gap study");
  ana->add_flag("--example-config", example, "print an annotated config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(o, instance_out);
    if (*run) return cmd_run(o);
    if (*cmp) return cmd_compare(o);
    if (*ana) return cmd_analyze(o, example);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const GraphError& e) {
    std::fprintf(stderr, "graph error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const BudgetExceeded& e) {
    std::fprintf(stderr, "budget exceeded: %s\n", e.what());
    return kBudget;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kConfig;
  }
  return kOk;
}
