#include "dvrsfbf/experiment.hpp"

#include "dvrsfbf/distsim.hpp"
#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/io.hpp"
#include "dvrsfbf/refsolve.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#ifndef DVRSFBF_GIT_DESCRIBE
#define DVRSFBF_GIT_DESCRIBE "unknown"
#endif

namespace dvrsfbf {

using nlohmann::json;

Algorithm parse_algorithm(const std::string& name) {
  if (name == "dvrsfbf") return Algorithm::Dvrsfbf;
  if (name == "vr-smfbs" || name == "vrsmfbs") return Algorithm::VrSmfbs;
  if (name == "both") return Algorithm::Both;
  throw ConfigError("unknown algorithm '" + name + "' (expected dvrsfbf, vr-smfbs or both)");
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Dvrsfbf: return "dvrsfbf";
    case Algorithm::VrSmfbs: return "vr-smfbs";
    case Algorithm::Both: return "both";
  }
  return "?";
}

namespace {

std::string rule_name(StepRule::Kind k) {
  switch (k) {
    case StepRule::Kind::Theory: return "theory";
    case StepRule::Kind::InverseLipschitz: return "inverse-lipschitz";
    case StepRule::Kind::Fixed: return "fixed";
  }
  return "?";
}

StepRule::Kind parse_rule(const std::string& s) {
  if (s == "theory") return StepRule::Kind::Theory;
  if (s == "inverse-lipschitz") return StepRule::Kind::InverseLipschitz;
  if (s == "fixed") return StepRule::Kind::Fixed;
  throw ConfigError("unknown step rule '" + s + "' (expected theory, inverse-lipschitz or fixed)");
}

std::string schedule_name(ScheduleSpec::Kind k) {
  switch (k) {
    case ScheduleSpec::Kind::Geometric: return "geometric";
    case ScheduleSpec::Kind::Polynomial: return "polynomial";
    case ScheduleSpec::Kind::Constant: return "constant";
  }
  return "?";
}

ScheduleSpec::Kind parse_schedule(const std::string& s) {
  if (s == "geometric") return ScheduleSpec::Kind::Geometric;
  if (s == "polynomial") return ScheduleSpec::Kind::Polynomial;
  if (s == "constant") return ScheduleSpec::Kind::Constant;
  throw ConfigError("unknown schedule '" + s + "' (expected geometric, polynomial or constant)");
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

json rule_json(const StepRule& r) { return {{"rule", rule_name(r.kind)}, {"value", r.value}}; }

StepRule rule_from(const json& j, StepRule r) {
  check_keys(j, "step rule", {"rule", "value"});
  if (j.contains("rule")) r.kind = parse_rule(j.at("rule").get<std::string>());
  read(j, "value", r.value);
  return r;
}

// Calibrated step multipliers of the strongly monotone presets: DVRSFBF
// runs at 0.0566 / ell_V, the baseline at 1 / (2 ell_V).
constexpr double kDvrsfbfScale = 0.0566;
constexpr double kBaselineScale = 0.5;
constexpr double kResidualStep = 0.06;

ExperimentConfig strongly_monotone_base() {
  ExperimentConfig c;
  c.instance = InstanceSpec{20, 7, 0, MarketPolicy::Shipped, "", false, json::object()};
  c.algorithm = Algorithm::Both;
  c.schedule = ScheduleSpec{ScheduleSpec::Kind::Geometric, 0.99, 2.0, 2.0, 1};
  c.K = 20;
  c.T = 3000;
  c.replicates = 10;
  c.target_residual = 1e-4;
  c.dvrsfbf_step = StepRule{StepRule::Kind::InverseLipschitz, kDvrsfbfScale};
  c.baseline_step = StepRule{StepRule::Kind::InverseLipschitz, kBaselineScale};
  c.residual_step = kResidualStep;
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (instance.file.empty() && (instance.players < 1 || instance.markets < 1))
    throw ConfigError("instance needs players >= 1 and markets >= 1");
  if (graph.topology != "cycle" && graph.topology != "complete")
    throw ConfigError("unknown topology '" + graph.topology + "' (expected cycle or complete)");
  if (!(graph.weight > 0.0 && graph.weight <= 1.0)) throw ConfigError("graph weight must lie in (0, 1]");
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (baseline_replicates < 0) throw ConfigError("baseline_replicates must be >= 0");
  if (T < 0) throw ConfigError("T must be >= 0");
  if (K < 0) throw ConfigError("K must be >= 0 (0 selects the inner-length formula)");
  if (stop_at_target && !(target_residual > 0.0)) throw ConfigError("target_residual must be positive");
  if (cadence < 1) throw ConfigError("cadence must be >= 1");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (residual_step && !(*residual_step > 0.0)) throw ConfigError("residual_step must be positive");
  for (const StepRule& r : {dvrsfbf_step, baseline_step})
    if (r.kind != StepRule::Kind::Theory && !(r.value > 0.0)) throw ConfigError("step rule value must be positive");
  if (mode == Mode::Monotone && bias_injection) throw ConfigError("bias injection needs strongly monotone mode");
  if (distributed && algorithm != Algorithm::Dvrsfbf)
    throw ConfigError("the distributed simulation only runs dvrsfbf");
  if (!(gap.radius > 0.0)) throw ConfigError("gap radius must be positive");
  for (int h : gap.horizons)
    if (h < 1) throw ConfigError("gap horizons must be >= 1");
}

std::vector<std::string> preset_names() { return {"table2", "table3", "table4", "fig2", "fig3"}; }

ExperimentConfig preset(const std::string& name) {
  if (name == "table2") {
    ExperimentConfig c = strongly_monotone_base();
    c.name = name;
    for (auto [N, m, pol] : {std::tuple{20, 7, MarketPolicy::Shipped}, std::tuple{10, 5, MarketPolicy::Random},
                             std::tuple{5, 3, MarketPolicy::Random}})
      for (double eta : {0.99, 0.98}) {
        Cell cell;
        cell.players = N;
        cell.markets = m;
        cell.policy = pol;
        cell.eta = eta;
        c.cells.push_back(cell);
      }
    return c;
  }
  if (name == "table4") {
    ExperimentConfig c = strongly_monotone_base();
    c.name = name;
    for (int K : {10, 20, 50}) {
      Cell cell;
      cell.K = K;
      c.cells.push_back(cell);
    }
    return c;
  }
  if (name == "table3") {
    ExperimentConfig c = strongly_monotone_base();
    c.name = name;
    c.mode = Mode::Monotone;
    c.instance.monotone_variant = true;
    c.schedule = ScheduleSpec{ScheduleSpec::Kind::Polynomial, 0.99, 2.0, 2.0, 1};
    c.T = 150;
    c.dvrsfbf_step = StepRule{};
    c.baseline_step = StepRule{};
    for (auto [N, m, pol] : {std::tuple{20, 7, MarketPolicy::Shipped}, std::tuple{10, 5, MarketPolicy::Random},
                             std::tuple{5, 3, MarketPolicy::Random}})
      for (double a : {2.0, 2.5}) {
        Cell cell;
        cell.players = N;
        cell.markets = m;
        cell.policy = pol;
        cell.exponent = a;
        c.cells.push_back(cell);
      }
    return c;
  }
  if (name == "fig2") {
    ExperimentConfig c = strongly_monotone_base();
    c.name = name;
    c.T = 750;
    c.stop_at_target = false;
    return c;
  }
  if (name == "fig3") {
    ExperimentConfig c = strongly_monotone_base();
    c.name = name;
    c.mode = Mode::Monotone;
    c.algorithm = Algorithm::Dvrsfbf;
    c.instance = InstanceSpec{5, 3, 0, MarketPolicy::Random, "", true, json::object()};
    c.schedule = ScheduleSpec{ScheduleSpec::Kind::Polynomial, 0.99, 2.0, 2.0, 1};
    c.T = 160;
    c.stop_at_target = false;
    c.dvrsfbf_step = StepRule{};
    c.gap.horizons = {40, 80, 160};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected table2, table3, table4, fig2 or fig3)");
}

json config_to_json(const ExperimentConfig& c) {
  json cells = json::array();
  for (const Cell& cell : c.cells) {
    json j = json::object();
    if (cell.players) j["players"] = *cell.players;
    if (cell.markets) j["markets"] = *cell.markets;
    if (cell.policy) j["policy"] = to_string(*cell.policy);
    if (cell.eta) j["eta"] = *cell.eta;
    if (cell.exponent) j["exponent"] = *cell.exponent;
    if (cell.K) j["K"] = *cell.K;
    cells.push_back(j);
  }
  return {
      {"name", c.name},
      {"instance",
       {{"players", c.instance.players},
        {"markets", c.instance.markets},
        {"seed", c.instance.seed},
        {"policy", to_string(c.instance.policy)},
        {"file", c.instance.file},
        {"monotone_variant", c.instance.monotone_variant},
        {"overrides", c.instance.overrides}}},
      {"graph", {{"topology", c.graph.topology}, {"weight", c.graph.weight}, {"edge_file", c.graph.edge_file}}},
      {"algorithm", to_string(c.algorithm)},
      {"mode", to_string(c.mode)},
      {"schedule",
       {{"kind", schedule_name(c.schedule.kind)},
        {"eta", c.schedule.eta},
        {"factor", c.schedule.factor},
        {"exponent", c.schedule.exponent},
        {"size", c.schedule.size}}},
      {"K", c.K},
      {"T", c.T},
      {"replicates", c.replicates},
      {"baseline_replicates", c.baseline_replicates},
      {"target_residual", c.target_residual},
      {"stop_at_target", c.stop_at_target},
      {"cadence", c.cadence},
      {"oracle_budget", c.oracle_budget},
      {"seed", c.seed},
      {"dvrsfbf_step", rule_json(c.dvrsfbf_step)},
      {"baseline_step", rule_json(c.baseline_step)},
      {"residual_step", c.residual_step ? json(*c.residual_step) : json(nullptr)},
      {"per_agent_noise", c.per_agent_noise},
      {"bias_injection", c.bias_injection},
      {"distributed", c.distributed},
      {"threads", c.threads},
      {"cells", cells},
      {"gap",
       {{"horizons", c.gap.horizons},
        {"radius", c.gap.radius},
        {"starts", c.gap.starts},
        {"iterations", c.gap.iterations}}},
  };
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  check_keys(j, "config",
             {"preset", "name", "instance", "graph", "algorithm", "mode", "schedule", "K", "T", "replicates",
              "baseline_replicates", "target_residual", "stop_at_target", "cadence", "oracle_budget", "seed",
              "dvrsfbf_step", "baseline_step", "residual_step", "per_agent_noise", "bias_injection", "distributed",
              "threads", "cells", "gap"});
  if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
  read(j, "name", c.name);
  if (j.contains("instance")) {
    const json& i = j.at("instance");
    check_keys(i, "instance", {"players", "markets", "seed", "policy", "file", "monotone_variant", "overrides"});
    read(i, "players", c.instance.players);
    read(i, "markets", c.instance.markets);
    read(i, "seed", c.instance.seed);
    if (i.contains("policy")) c.instance.policy = parse_market_policy(i.at("policy").get<std::string>());
    read(i, "file", c.instance.file);
    read(i, "monotone_variant", c.instance.monotone_variant);
    if (i.contains("overrides")) c.instance.overrides = i.at("overrides");
  }
  if (j.contains("graph")) {
    check_keys(j.at("graph"), "graph", {"topology", "weight", "edge_file"});
    read(j.at("graph"), "topology", c.graph.topology);
    read(j.at("graph"), "weight", c.graph.weight);
    read(j.at("graph"), "edge_file", c.graph.edge_file);
  }
  if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "schedule", {"kind", "eta", "factor", "exponent", "size"});
    if (s.contains("kind")) c.schedule.kind = parse_schedule(s.at("kind").get<std::string>());
    read(s, "eta", c.schedule.eta);
    read(s, "factor", c.schedule.factor);
    read(s, "exponent", c.schedule.exponent);
    read(s, "size", c.schedule.size);
  }
  read(j, "K", c.K);
  read(j, "T", c.T);
  read(j, "replicates", c.replicates);
  read(j, "baseline_replicates", c.baseline_replicates);
  read(j, "target_residual", c.target_residual);
  read(j, "stop_at_target", c.stop_at_target);
  read(j, "cadence", c.cadence);
  read(j, "oracle_budget", c.oracle_budget);
  read(j, "seed", c.seed);
  if (j.contains("dvrsfbf_step")) c.dvrsfbf_step = rule_from(j.at("dvrsfbf_step"), c.dvrsfbf_step);
  if (j.contains("baseline_step")) c.baseline_step = rule_from(j.at("baseline_step"), c.baseline_step);
  if (j.contains("residual_step")) {
    if (j.at("residual_step").is_null()) c.residual_step.reset();
    else c.residual_step = j.at("residual_step").get<double>();
  }
  read(j, "per_agent_noise", c.per_agent_noise);
  read(j, "bias_injection", c.bias_injection);
  read(j, "distributed", c.distributed);
  read(j, "threads", c.threads);
  if (j.contains("cells")) {
    c.cells.clear();
    for (const json& e : j.at("cells")) {
      check_keys(e, "cell", {"players", "markets", "policy", "eta", "exponent", "K"});
      Cell cell;
      if (e.contains("players")) cell.players = e.at("players").get<int>();
      if (e.contains("markets")) cell.markets = e.at("markets").get<int>();
      if (e.contains("policy")) cell.policy = parse_market_policy(e.at("policy").get<std::string>());
      if (e.contains("eta")) cell.eta = e.at("eta").get<double>();
      if (e.contains("exponent")) cell.exponent = e.at("exponent").get<double>();
      if (e.contains("K")) cell.K = e.at("K").get<int>();
      c.cells.push_back(cell);
    }
  }
  if (j.contains("gap")) {
    const json& g = j.at("gap");
    check_keys(g, "gap", {"horizons", "radius", "starts", "iterations"});
    read(g, "horizons", c.gap.horizons);
    read(g, "radius", c.gap.radius);
    read(g, "starts", c.gap.starts);
    read(g, "iterations", c.gap.iterations);
  }
  return c;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(config_to_json(cfg).dump()); }

std::string example_config() {
  return R"(// Experiment config. Comments (// to end of line) are allowed; every
// key is optional and falls back to the preset named by "preset", or to
// the built-in defaults when no preset is given.
{
  "preset": "table2",            // table2 | table3 | table4 | fig2 | fig3
  "name": "my-run",              // used in output file names
  "instance": {
    "players": 20, "markets": 7,
    "seed": 0,                   // generator seed
    "policy": "shipped",         // shipped (20 x 7 only) | random | all-to-all
    "file": "",                  // instance JSON; replaces the generator
    "monotone_variant": false,   // zero the quadratic costs (merely monotone)
    "overrides": {}              // e.g. {"slope_variance": 0.0, "cost_quad": 2.0}
  },
  "graph": {
    "topology": "cycle",         // cycle | complete
    "weight": 1.0,               // edge weight in (0, 1]
    "edge_file": ""              // "i j w" lines; replaces the topology
  },
  "algorithm": "both",           // dvrsfbf | vr-smfbs | both
  "mode": "strongly-monotone",   // strongly-monotone | monotone (K = T, alpha = 1/T)
  "schedule": {
    "kind": "geometric",         // geometric: S_t = floor(eta^(-factor (t+1)))
    "eta": 0.99, "factor": 2.0,
    "exponent": 2.0,             // polynomial: S_t = T^exponent
    "size": 1                    // constant: S_t = size
  },
  "K": 20,                       // inner steps; 0 = inner-length formula
  "T": 3000,                     // outer epochs (upper bound when stopping)
  "replicates": 10,
  "baseline_replicates": 0,      // 0 = same as replicates
  "target_residual": 1e-4,
  "stop_at_target": true,
  "cadence": 1,                  // residual check every cadence epochs
  "oracle_budget": 1000000000,   // runs stop once exceeded
  "seed": 2026,                  // master seed of the sampling streams
  "dvrsfbf_step": {"rule": "inverse-lipschitz", "value": 0.0566},  // alpha = value / ell_V
  "baseline_step": {"rule": "inverse-lipschitz", "value": 0.5},    // theory | inverse-lipschitz | fixed
  "residual_step": 0.06,         // step inside the residual metric; null = algorithm step
  "per_agent_noise": true,       // each firm draws its own slope sample
  "bias_injection": false,       // mean drawn in a 1/sqrt(S_t) ball each epoch
  "distributed": false,          // run dvrsfbf through the message-passing simulation
  "threads": 1,                  // replicates run in parallel; 0 = hardware threads
  "cells": [                     // compare: each cell overrides the fields it sets
    {"players": 20, "markets": 7, "policy": "shipped", "eta": 0.99},
    {"players": 10, "markets": 5, "policy": "random", "eta": 0.98, "K": 20}
  ],
  "gap": {                       // monotone gap study (run --gap)
    "horizons": [40, 80, 160],
    "radius": 1.0,               // ball around the reference solution
    "starts": 4, "iterations": 5000
  }
}
)";
}

Problem build_problem(const ExperimentConfig& cfg) {
  Problem pr;
  const InstanceSpec& in = cfg.instance;
  json j;
  if (!in.file.empty()) {
    std::ifstream f(in.file);
    if (!f) throw ConfigError("cannot open instance file " + in.file);
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("instance file " + in.file + ": " + e.what());
    }
  } else {
    j = {{"format", "dvrsfbf-instance"},
         {"version", 1},
         {"generator",
          {{"players", in.players}, {"markets", in.markets}, {"seed", in.seed}, {"policy", to_string(in.policy)}}}};
  }
  if (!in.overrides.empty()) j["overrides"] = in.overrides;
  pr.game = instance_from_json(j);
  if (in.monotone_variant) pr.game = make_monotone_variant(pr.game);

  if (!cfg.graph.edge_file.empty()) {
    std::ifstream f(cfg.graph.edge_file);
    if (!f) throw ConfigError("cannot open edge list " + cfg.graph.edge_file);
    pr.graph = read_edge_list(f);
  } else if (pr.game.num_players() == 1) {
    pr.graph = validate(Eigen::MatrixXd::Zero(1, 1));
  } else if (cfg.graph.topology == "complete") {
    pr.graph = build_complete(pr.game.num_players(), cfg.graph.weight);
  } else {
    pr.graph = build_cycle(pr.game.num_players(), cfg.graph.weight);
  }
  if (pr.graph.size() != pr.game.num_players())
    throw ConfigError("graph has " + std::to_string(pr.graph.size()) + " nodes but the instance has " +
                      std::to_string(pr.game.num_players()) + " players");
  pr.analysis = analyze(pr.game);
  pr.ell_V = lipschitz_V(pr.analysis, pr.graph, pr.game);
  return pr;
}

ExperimentConfig apply_cell(const ExperimentConfig& cfg, const Cell& cell) {
  ExperimentConfig c = cfg;
  c.cells.clear();
  if (cell.players) c.instance.players = *cell.players;
  if (cell.markets) c.instance.markets = *cell.markets;
  if (cell.policy) c.instance.policy = *cell.policy;
  if (cell.eta) c.schedule.eta = *cell.eta;
  if (cell.exponent) c.schedule.exponent = *cell.exponent;
  if (cell.K) c.K = *cell.K;
  return c;
}

std::string cell_label(const ExperimentConfig& c) {
  std::ostringstream s;
  s << "N" << c.instance.players << "_m" << c.instance.markets << "_";
  switch (c.schedule.kind) {
    case ScheduleSpec::Kind::Geometric: s << "eta" << c.schedule.eta; break;
    case ScheduleSpec::Kind::Polynomial: s << "alpha" << c.schedule.exponent; break;
    case ScheduleSpec::Kind::Constant: s << "S" << c.schedule.size; break;
  }
  if (c.mode == Mode::StronglyMonotone) s << "_K" << c.K;
  return s.str();
}

namespace {

std::string schedule_text(const ExperimentConfig& c) {
  std::ostringstream s;
  switch (c.schedule.kind) {
    case ScheduleSpec::Kind::Geometric: s << "eta=" << c.schedule.eta; break;
    case ScheduleSpec::Kind::Polynomial: s << "alpha=" << c.schedule.exponent; break;
    case ScheduleSpec::Kind::Constant: s << "S=" << c.schedule.size; break;
  }
  return s.str();
}

double effective_eta(const ScheduleSpec& s) { return std::pow(s.eta, s.factor); }

}  // namespace

SolverParams solver_params(const ExperimentConfig& cfg, const Problem& pr, Algorithm algorithm) {
  if (algorithm == Algorithm::Both) throw ConfigError("solver_params: pick one algorithm");
  const int N = pr.game.num_players();
  SolverParams p;
  p.T = cfg.T;
  p.mode = cfg.mode;
  p.averaging = cfg.mode == Mode::Monotone;
  p.bias_injection = cfg.bias_injection;
  p.per_agent_noise = cfg.per_agent_noise;
  if (cfg.residual_step) p.residual_step = StepConfig::uniform(N, *cfg.residual_step);
  if (cfg.stop_at_target) p.stopping.target_residual = cfg.target_residual;
  p.stopping.cadence = cfg.cadence;
  p.stopping.oracle_budget = cfg.oracle_budget;

  switch (cfg.schedule.kind) {
    case ScheduleSpec::Kind::Geometric:
      p.schedule = BatchSchedule::geometric(cfg.schedule.eta, cfg.schedule.factor);
      break;
    case ScheduleSpec::Kind::Polynomial:
      p.schedule = BatchSchedule::polynomial(std::max(1, cfg.T), cfg.schedule.exponent);
      break;
    case ScheduleSpec::Kind::Constant:
      p.schedule = BatchSchedule::constant(cfg.schedule.size);
      break;
  }

  const StepRule& rule = algorithm == Algorithm::Dvrsfbf ? cfg.dvrsfbf_step : cfg.baseline_step;
  std::optional<StepPolicy> theory;
  auto policy = [&]() -> const StepPolicy& {
    if (!theory) theory = step_policy(pr.game, pr.analysis, pr.graph, cfg.mode, std::max(1, cfg.T));
    return *theory;
  };
  switch (rule.kind) {
    case StepRule::Kind::Theory:
      p.step = policy().step;
      break;
    case StepRule::Kind::InverseLipschitz:
      p.step = StepConfig::uniform(N, rule.value / pr.ell_V);
      p.step_override = true;
      break;
    case StepRule::Kind::Fixed:
      p.step = StepConfig::uniform(N, rule.value);
      p.step_override = true;
      break;
  }

  if (algorithm == Algorithm::VrSmfbs) {
    p.K = 1;
  } else if (cfg.mode == Mode::Monotone) {
    p.K = std::max(1, cfg.T);
  } else if (cfg.K > 0) {
    p.K = cfg.K;
  } else {
    const StepPolicy& pol = policy();
    p.K = optimal_inner_length(pol.q, pol.rho, effective_eta(cfg.schedule));
  }
  return p;
}

RunSet run_replicates(const ExperimentConfig& cfg, const Problem& pr, Algorithm algorithm, const RunContext& ctx,
                      std::optional<int> count) {
  const int n = count ? *count
                      : (algorithm == Algorithm::VrSmfbs && cfg.baseline_replicates > 0 ? cfg.baseline_replicates
                                                                                         : cfg.replicates);
  const SolverParams base = solver_params(cfg, pr, algorithm);
  RunSet out;
  out.algorithm = algorithm;
  out.replicates.resize(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};

  auto work = [&] {
    for (int r = next++; r < n; r = next++) {
      try {
        SolverParams p = base;
        p.replicate = static_cast<std::uint64_t>(r);
        Trajectory tr;
        if (algorithm == Algorithm::VrSmfbs) tr = vr_smfbs_run(pr.game, pr.graph, p, cfg.seed, ctx);
        else if (cfg.distributed) tr = dist::simulate(pr.game, pr.graph, p, cfg.seed, {}, ctx).trajectory;
        else tr = dvrsfbf_run(pr.game, pr.graph, p, cfg.seed, ctx);
        out.replicates[static_cast<std::size_t>(r)] = std::move(tr);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
  };
  int workers = cfg.threads == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency())) : cfg.threads;
  workers = std::clamp(workers, 1, n);
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  for (int r = 0; r < n; ++r) {
    if (!errors[static_cast<std::size_t>(r)]) continue;
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(r)]);
    } catch (const NumericalError& e) {
      throw NumericalError(to_string(algorithm) + " replicate " + std::to_string(r) + ": " + e.what(), e.epoch(),
                           e.step());
    } catch (const ConfigError& e) {
      throw ConfigError(to_string(algorithm) + " replicate " + std::to_string(r) + ": " + e.what());
    }
  }
  return out;
}

std::optional<std::uint64_t> oracles_to_target(const Trajectory& traj, double target) {
  for (const auto& e : traj.epochs)
    if (e.residual <= target) return e.oracles;
  return std::nullopt;
}

OracleSummary summarize_oracles(const RunSet& runs, double target) {
  OracleSummary s;
  s.replicates = static_cast<int>(runs.replicates.size());
  std::vector<double> v;
  for (const auto& tr : runs.replicates) {
    const auto o = oracles_to_target(tr, target);
    if (o) ++s.reached;
    v.push_back(o ? static_cast<double>(*o) : std::numeric_limits<double>::infinity());
  }
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.min = v.front();
  s.max = v.back();
  return s;
}

void write_mean_csv(std::ostream& out, const RunSet& runs) {
  out << "epoch,oracles,residual,dist_to_ref,wall_ms,replicates\n";
  if (runs.replicates.empty()) return;
  std::size_t len = runs.replicates.front().epochs.size();
  for (const auto& tr : runs.replicates) len = std::min(len, tr.epochs.size());
  const double n = static_cast<double>(runs.replicates.size());
  out.precision(10);
  for (std::size_t t = 0; t < len; ++t) {
    double oracles = 0, res = 0, dist = 0, wall = 0;
    for (const auto& tr : runs.replicates) {
      const EpochRecord& e = tr.epochs[t];
      oracles += static_cast<double>(e.oracles) / n;
      res += e.residual / n;
      dist += e.dist_to_ref / n;
      wall += e.wall_ms / n;
    }
    out << t << "," << oracles << "," << res << ",";
    if (!std::isnan(dist)) out << dist;
    out << "," << wall << "," << runs.replicates.size() << "\n";
  }
}

std::vector<ComparisonRow> compare(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<ExperimentConfig> cells;
  if (cfg.cells.empty()) cells.push_back(cfg);
  for (const Cell& cell : cfg.cells) cells.push_back(apply_cell(cfg, cell));

  std::vector<Algorithm> algos;
  if (cfg.algorithm != Algorithm::VrSmfbs) algos.push_back(Algorithm::Dvrsfbf);
  if (cfg.algorithm != Algorithm::Dvrsfbf) algos.push_back(Algorithm::VrSmfbs);

  ExperimentConfig run_cfg;
  std::map<std::string, OracleSummary> baseline_cache;  // the baseline ignores K
  std::vector<ComparisonRow> rows;
  for (ExperimentConfig c : cells) {
    c.stop_at_target = true;
    c.validate();
    const Problem pr = build_problem(c);
    for (Algorithm a : algos) {
      ComparisonRow row;
      row.cell = cell_label(c);
      row.players = pr.game.num_players();
      row.markets = pr.game.num_markets();
      row.schedule = schedule_text(c);
      row.algorithm = a;
      row.budget = c.oracle_budget;
      row.K = solver_params(c, pr, a).K;
      if (a == Algorithm::VrSmfbs) {
        ExperimentConfig key = c;
        key.K = 0;
        const std::string k = config_to_json(key).dump();
        auto it = baseline_cache.find(k);
        if (it == baseline_cache.end())
          it = baseline_cache.emplace(k, summarize_oracles(run_replicates(c, pr, a), c.target_residual)).first;
        row.oracles = it->second;
      } else {
        row.oracles = summarize_oracles(run_replicates(c, pr, a), c.target_residual);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_oracles(const OracleSummary& s, std::uint64_t budget) {
  char buf[64];
  if (std::isinf(s.median)) {
    std::snprintf(buf, sizeof buf, "> %.1e", static_cast<double>(budget));
  } else {
    std::snprintf(buf, sizeof buf, "%.1e", s.median);
  }
  return buf;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "cell,players,markets,schedule,K,algorithm,replicates,reached,median_oracles,min_oracles,max_oracles,"
         "display\n";
  out.precision(10);
  auto num = [&](double v) {
    if (std::isinf(v)) out << "inf";
    else out << v;
  };
  for (const auto& r : rows) {
    out << r.cell << "," << r.players << "," << r.markets << "," << r.schedule << "," << r.K << ","
        << to_string(r.algorithm) << "," << r.oracles.replicates << "," << r.oracles.reached << ",";
    num(r.oracles.median);
    out << ",";
    num(r.oracles.min);
    out << ",";
    num(r.oracles.max);
    out << "," << format_oracles(r.oracles, r.budget) << "\n";
  }
}

std::vector<GapRow> gap_study(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.mode != Mode::Monotone) throw ConfigError("the gap study needs monotone mode");
  if (cfg.gap.horizons.empty()) throw ConfigError("the gap study needs at least one horizon");
  const Problem pr = build_problem(cfg);
  const ReferenceSolution ref = solve_reference(pr.game, pr.graph, 1e-10);
  std::vector<GapRow> rows;
  for (int T : cfg.gap.horizons) {
    ExperimentConfig c = cfg;
    c.T = T;
    c.stop_at_target = false;
    const RunSet runs = run_replicates(c, pr, Algorithm::Dvrsfbf);
    for (std::size_t r = 0; r < runs.replicates.size(); ++r) {
      GapSpec spec;
      spec.center = ref.x;
      spec.radius = cfg.gap.radius;
      spec.starts = cfg.gap.starts;
      spec.iterations = cfg.gap.iterations;
      spec.seed = cfg.seed + r;
      const GapReport rep = gap_estimate(pr.game, pr.graph, *runs.replicates[r].averaged, spec);
      rows.push_back({T, static_cast<int>(r), rep.value, rep.probes, rep.center_contains_point});
    }
  }
  return rows;
}

void write_gap_csv(std::ostream& out, const std::vector<GapRow>& rows) {
  out << "T,replicate,gap,probes,center_contains_point\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.T << "," << r.replicate << "," << r.gap << "," << r.probes << "," << (r.contains ? 1 : 0) << "\n";
}

std::string git_describe() { return DVRSFBF_GIT_DESCRIBE; }

json run_metadata(const ExperimentConfig& cfg) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return {{"git_describe", git_describe()}, {"config_hash", hash}, {"seed", cfg.seed}, {"config", config_to_json(cfg)}};
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dvrsfbf
