#include "doctest.h"

#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/experiment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace dvrsfbf;
using nlohmann::json;

TEST_CASE("annotated example config parses and covers every key") {
  const json j = json::parse(example_config(), nullptr, true, true);
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.name == "my-run");
  CHECK(c.cells.size() == 2);
  CHECK(c.gap.horizons == std::vector<int>{40, 80, 160});
  c.validate();

  // Every key written by config_to_json appears in the example.
  const json full = config_to_json(c);
  for (const auto& [key, value] : full.items()) {
    CHECK_MESSAGE(j.contains(key), key);
    if (value.is_object())
      for (const auto& [sub, _] : value.items()) {
        const std::string label = key + "." + sub;
        CHECK_MESSAGE(j.at(key).contains(sub), label);
      }
  }
}

TEST_CASE("config JSON round trip and hash") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset(name);
    c.validate();
    const ExperimentConfig back = config_from_json(json::parse(config_to_json(c).dump()));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));
  }
  ExperimentConfig a = preset("table2");
  ExperimentConfig b = a;
  b.seed += 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_json(json{{"replicate", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"instance", {{"player", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"T", "many"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"algorithm", "sgd"}}), ConfigError);
  CHECK_THROWS_AS(preset("table9"), ConfigError);

  ExperimentConfig c;
  c.replicates = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.target_residual = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.stop_at_target = false;
  CHECK_NOTHROW(c.validate());
  c = ExperimentConfig{};
  c.graph.topology = "star";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.distributed = true;
  c.algorithm = Algorithm::Both;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("presets carry the calibrated protocol") {
  const ExperimentConfig t2 = preset("table2");
  CHECK(t2.cells.size() == 6);
  CHECK(t2.K == 20);
  CHECK(t2.algorithm == Algorithm::Both);
  CHECK(t2.schedule.eta == 0.99);
  CHECK(t2.schedule.factor == 2.0);
  CHECK(*t2.residual_step == 0.06);

  const ExperimentConfig t4 = preset("table4");
  REQUIRE(t4.cells.size() == 3);
  CHECK(*t4.cells[2].K == 50);

  const ExperimentConfig f3 = preset("fig3");
  CHECK(f3.mode == Mode::Monotone);
  CHECK(f3.instance.monotone_variant);
  const Problem pr = build_problem(f3);
  CHECK_FALSE(pr.analysis.is_strongly_monotone);
  const SolverParams p = solver_params(f3, pr, Algorithm::Dvrsfbf);
  CHECK(p.K == f3.T);
  CHECK(p.step.alpha() == doctest::Approx(1.0 / f3.T));
  CHECK(p.schedule.size(0) == 160u * 160u);
}

TEST_CASE("solver parameters from step rules") {
  ExperimentConfig c = preset("table2");
  c.cells.clear();
  const Problem pr = build_problem(c);
  const SolverParams d = solver_params(c, pr, Algorithm::Dvrsfbf);
  CHECK(d.step.alpha() == doctest::Approx(0.0566 / pr.ell_V).epsilon(1e-12));
  CHECK(d.K == 20);
  const SolverParams v = solver_params(c, pr, Algorithm::VrSmfbs);
  CHECK(v.step.alpha() == doctest::Approx(0.5 / pr.ell_V).epsilon(1e-12));
  CHECK(v.K == 1);

  c.K = 0;
  c.dvrsfbf_step = StepRule{};
  const SolverParams auto_k = solver_params(c, pr, Algorithm::Dvrsfbf);
  const StepPolicy pol = step_policy(pr.game, pr.analysis, pr.graph, Mode::StronglyMonotone);
  CHECK(auto_k.K == optimal_inner_length(pol.q, pol.rho, 0.99 * 0.99));
  CHECK_THROWS_AS(solver_params(c, pr, Algorithm::Both), ConfigError);
}

TEST_CASE("one-cell sweep with one replicate gives a one-row table") {
  ExperimentConfig c;
  c.instance.players = 3;
  c.instance.markets = 2;
  c.instance.policy = MarketPolicy::AllToAll;
  c.replicates = 1;
  c.T = 2000;
  c.dvrsfbf_step = StepRule{StepRule::Kind::InverseLipschitz, 0.0566};
  const auto rows = compare(c);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].oracles.replicates == 1);
  CHECK(rows[0].oracles.reached == 1);
  CHECK(rows[0].cell == cell_label(c));

  std::ostringstream csv;
  write_comparison_csv(csv, rows);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "cell,players,markets,schedule,K,algorithm,replicates,reached,median_oracles,min_oracles,max_oracles,display");
}

TEST_CASE("replicates are ordered and independent of the thread count") {
  ExperimentConfig c;
  c.instance.players = 4;
  c.instance.markets = 2;
  c.instance.policy = MarketPolicy::Random;
  c.replicates = 5;
  c.T = 30;
  c.stop_at_target = false;
  c.dvrsfbf_step = StepRule{StepRule::Kind::InverseLipschitz, 0.0566};
  const Problem pr = build_problem(c);
  const RunSet one = run_replicates(c, pr, Algorithm::Dvrsfbf);
  c.threads = 3;
  const RunSet three = run_replicates(c, pr, Algorithm::Dvrsfbf);
  REQUIRE(one.replicates.size() == 5);
  for (std::size_t r = 0; r < 5; ++r)
    CHECK((one.replicates[r].final_state().data().array() == three.replicates[r].final_state().data().array()).all());
  CHECK((one.replicates[0].final_state().data() - one.replicates[1].final_state().data()).norm() > 0.0);

  std::ostringstream mean;
  write_mean_csv(mean, one);
  std::istringstream lines(mean.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "epoch,oracles,residual,dist_to_ref,wall_ms,replicates");
}

TEST_CASE("oracle summaries and the over-budget marker") {
  Trajectory reach, miss;
  for (int t = 0; t < 3; ++t) {
    EpochRecord e;
    e.epoch = t;
    e.oracles = 100u * t;
    e.residual = t == 2 ? 1e-5 : 1.0;
    reach.epochs.push_back(e);
    e.residual = 1.0;
    miss.epochs.push_back(e);
  }
  CHECK(*oracles_to_target(reach, 1e-4) == 200u);
  CHECK_FALSE(oracles_to_target(miss, 1e-4));

  RunSet runs;
  runs.replicates = {reach, reach, miss};
  OracleSummary s = summarize_oracles(runs, 1e-4);
  CHECK(s.reached == 2);
  CHECK(s.median == 200.0);
  CHECK(format_oracles(s, 1'000'000'000ULL) == "2.0e+02");
  runs.replicates = {reach, miss, miss};
  s = summarize_oracles(runs, 1e-4);
  CHECK(std::isinf(s.median));
  CHECK(format_oracles(s, 1'000'000'000ULL) == "> 1.0e+09");
}

TEST_CASE("metadata and atomic writes") {
  const ExperimentConfig c = preset("fig2");
  const json meta = run_metadata(c);
  CHECK(meta.at("seed") == c.seed);
  CHECK(meta.at("config_hash").get<std::string>().size() == 16);
  CHECK_FALSE(meta.at("git_describe").get<std::string>().empty());

  const auto path = std::filesystem::temp_directory_path() / "dvrsfbf_atomic" / "out.txt";
  write_atomic(path, "first");
  write_atomic(path, "second");
  std::ifstream in(path);
  std::string text;
  std::getline(in, text);
  CHECK(text == "second");
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove_all(path.parent_path());
}
