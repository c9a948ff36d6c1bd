#include "doctest.h"
#include "support.hpp"

#include "dvrsfbf/distsim.hpp"
#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/solver.hpp"

#include <limits>
#include <sstream>

using namespace dvrsfbf;
using dist::SimOptions;
using dist::simulate;

namespace {

SolverParams params_for(const GameInstance& g, const CommGraph& graph, int T, int K) {
  SolverParams p;
  p.T = T;
  p.K = K;
  p.step = StepConfig::uniform(g.num_players(), 0.5 / lipschitz_V(analyze(g), graph, g));
  p.step_override = true;
  p.schedule = BatchSchedule::geometric(0.9, 2.0);
  return p;
}

double max_gap(const Trajectory& a, const Trajectory& b) {
  REQUIRE(a.epochs.size() == b.epochs.size());
  double gap = 0.0;
  for (std::size_t t = 0; t < a.epochs.size(); ++t)
    gap = std::max(gap, (a.epochs[t].x.data() - b.epochs[t].x.data()).lpNorm<Eigen::Infinity>());
  return gap;
}

dist::LocalState local_block(const GameInstance& g, const State& x, int i) {
  const int m = g.num_markets();
  return {x.u().segment(g.offset(i), g.players[i].dim()), x.p().segment(i * m, m), x.y().segment(i * m, m)};
}

dist::NeighborView view_of(const GameInstance& g, const dist::AgentNode& a, const State& x) {
  dist::NeighborView v;
  const Eigen::MatrixXd A = g.coupling_matrix();
  for (int j : a.interference_neighbors()) {
    const Eigen::VectorXd uj = x.u().segment(g.offset(j), g.players[j].dim());
    v.supply.push_back(A.middleCols(g.offset(j), g.players[j].dim()) * uj);
  }
  const int m = g.num_markets();
  for (int j : a.operator_neighbors()) {
    Eigen::VectorXd d(2 * m);
    d << x.p().segment(j * m, m), x.y().segment(j * m, m);
    v.dual.push_back(d);
  }
  return v;
}

}  // namespace

TEST_CASE("distributed run matches the centralized solver") {
  const GameInstance g = generate_cournot(6, 3, 11, MarketPolicy::Random);
  const CommGraph graph = build_cycle(6, 0.8);
  SolverParams p = params_for(g, graph, 25, 4);
  for (bool per_agent : {false, true}) {
    p.per_agent_noise = per_agent;
    const Trajectory central = dvrsfbf_run(g, graph, p, 31);
    const auto sim = simulate(g, graph, p, 31);
    const double gap = max_gap(central, sim.trajectory);
    MESSAGE("per-agent noise " << per_agent << ": max deviation " << gap);
    CHECK(gap <= 1e-12);
    CHECK(sim.trajectory.total_oracles == central.total_oracles);
    for (std::size_t t = 0; t < central.epochs.size(); ++t) {
      CHECK(sim.trajectory.epochs[t].oracles == central.epochs[t].oracles);
      CHECK(sim.trajectory.epochs[t].residual == doctest::Approx(central.epochs[t].residual).epsilon(1e-12));
    }
  }
}

TEST_CASE("worker count does not change the trajectory") {
  const GameInstance g = generate_cournot(7, 3, 12, MarketPolicy::Random);
  const CommGraph graph = build_cycle(7, 1.0);
  const SolverParams p = params_for(g, graph, 15, 3);
  const auto one = simulate(g, graph, p, 8, SimOptions{1, false});
  for (int threads : {2, 3, 0}) {
    const auto other = simulate(g, graph, p, 8, SimOptions{threads, false});
    CHECK(max_gap(one.trajectory, other.trajectory) == 0.0);
  }
}

TEST_CASE("monotone averaging in the distributed run") {
  const GameInstance g = make_monotone_variant(generate_cournot(5, 3, 7, MarketPolicy::AllToAll));
  const CommGraph graph = build_cycle(5, 1.0);
  SolverParams p;
  p.mode = Mode::Monotone;
  p.averaging = true;
  p.T = 8;
  p.K = 8;
  p.step = StepConfig::uniform(5, 1.0 / 8);
  p.schedule = BatchSchedule::polynomial(8, 2.0);
  const Trajectory central = dvrsfbf_run(g, graph, p, 2);
  const auto sim = simulate(g, graph, p, 2, SimOptions{2, false});
  REQUIRE(sim.trajectory.averaged.has_value());
  CHECK((sim.trajectory.averaged->data() - central.averaged->data()).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(sim.trajectory.epoch_averages.size() == central.epoch_averages.size());
}

TEST_CASE("single agent sends nothing") {
  const GameInstance g = generate_cournot(1, 2, 3, MarketPolicy::AllToAll);
  const CommGraph one = fixtures::single_node();
  const SolverParams p = params_for(g, one, 10, 3);
  const auto sim = simulate(g, one, p, 1, SimOptions{1, true});
  CHECK(sim.messages.size() == 1);
  CHECK(sim.messages[0].total() == 0);
  CHECK(sim.messages[0].bytes == 0);
  CHECK(sim.trace.empty());
  CHECK(sim.rounds == 10 * 7);
  CHECK(max_gap(sim.trajectory, dvrsfbf_run(g, one, p, 1)) <= 1e-12);
}

TEST_CASE("message audit on a five-agent cycle") {
  const GameInstance g = generate_cournot(5, 3, 7, MarketPolicy::Random);
  const CommGraph graph = build_cycle(5, 1.0);
  const int T = 4, K = 3;
  const auto sim = simulate(g, graph, params_for(g, graph, T, K), 5, SimOptions{1, true});
  const auto& stats = dist::message_stats(sim);
  const auto nbr_a = interference_neighbors(g);
  for (int i = 0; i < 5; ++i) {
    const std::uint64_t a = nbr_a[i].size(), y = graph.neighbors[i].size();
    CHECK(y == 2);
    CHECK(stats[i].interference == a * (2 * K + 1) * T);
    CHECK(stats[i].op == y * (2 * K + 1) * T);
    CHECK(stats[i].half_step == (a + y) * K * T);
    CHECK(stats[i].correction == (a + y) * K * T);
    CHECK(stats[i].outer == (a + y) * T);
    CHECK(stats[i].bytes == (a * 3 + y * 6) * (2 * K + 1) * T * sizeof(double));
  }
  CHECK(sim.rounds == static_cast<std::uint64_t>(T * (2 * K + 1)));

  // Per inner step and round kind, each agent messages every neighbour once.
  std::vector<std::vector<int>> per_round(sim.rounds + 1, std::vector<int>(5, 0));
  for (const auto& e : sim.trace) {
    ++per_round[e.round][e.sender];
    if (e.channel == dist::Channel::Operator) {
      const auto& nb = graph.neighbors[e.sender];
      CHECK(std::find(nb.begin(), nb.end(), e.receiver) != nb.end());
    }
  }
  for (std::uint64_t r = 1; r <= sim.rounds; ++r)
    for (int i = 0; i < 5; ++i)
      CHECK(per_round[r][i] == static_cast<int>(nbr_a[i].size() + graph.neighbors[i].size()));

  std::ostringstream out;
  dist::write_trace(out, sim);
  std::size_t lines = 0;
  for (char c : out.str()) lines += c == '\n';
  CHECK(lines == sim.trace.size() + 1);  // header comment
}

TEST_CASE("closed-form counts for one epoch and one step on a three-cycle") {
  const GameInstance g = generate_cournot(3, 2, 4, MarketPolicy::AllToAll);
  const CommGraph graph = build_cycle(3, 1.0);
  const auto sim = simulate(g, graph, params_for(g, graph, 1, 1), 2);
  for (const auto& st : sim.messages) {
    // Two neighbours on each channel: one outer, one half-step and one
    // correction payload per neighbour.
    CHECK(st.interference == 6);
    CHECK(st.op == 6);
    CHECK(st.outer == 4);
  }
  CHECK(sim.rounds == 3);

  const auto k2 = simulate(g, graph, params_for(g, graph, 1, 2), 2);
  const auto k4 = simulate(g, graph, params_for(g, graph, 1, 4), 2);
  for (int i = 0; i < 3; ++i) {
    CHECK(k4.messages[i].half_step == 2 * k2.messages[i].half_step);
    CHECK(k4.messages[i].correction == 2 * k2.messages[i].correction);
    CHECK(k4.messages[i].outer == k2.messages[i].outer);
  }
}

TEST_CASE("agent outputs depend only on local data and received views") {
  const GameInstance g = generate_cournot(6, 3, 9, MarketPolicy::Random);
  const CommGraph graph = build_cycle(6, 0.6);
  const StepConfig step = StepConfig::uniform(6, 0.01);
  std::mt19937_64 rng(1);
  const State x = fixtures::random_state(g, rng);
  const State Vx = apply_V(g, graph, x);
  const Eigen::VectorXd slopes = g.demand_slope_mean;

  for (int i = 0; i < 6; ++i) {
    const dist::AgentNode clean(g, graph, step, i);
    // Poison every other player's private data and every non-neighbour's
    // state; none of it may reach agent i.
    GameInstance poisoned = g;
    for (int j = 0; j < 6; ++j)
      if (j != i) {
        poisoned.players[j].cost_quad = std::numeric_limits<double>::quiet_NaN();
        poisoned.players[j].cost_lin.setConstant(std::numeric_limits<double>::quiet_NaN());
      }
    const dist::AgentNode node(poisoned, graph, step, i);
    State xp = x;
    const auto& na = node.interference_neighbors();
    const auto& ny = node.operator_neighbors();
    for (int j = 0; j < 6; ++j) {
      if (j == i) continue;
      if (std::find(na.begin(), na.end(), j) == na.end())
        xp.u().segment(g.offset(j), g.players[j].dim()).setConstant(std::numeric_limits<double>::quiet_NaN());
      if (std::find(ny.begin(), ny.end(), j) == ny.end()) {
        xp.p().segment(j * 3, 3).setConstant(std::numeric_limits<double>::quiet_NaN());
        xp.y().segment(j * 3, 3).setConstant(std::numeric_limits<double>::quiet_NaN());
      }
    }
    const dist::LocalState out = node.local_V(local_block(g, xp, i), view_of(g, node, xp), slopes);
    const dist::LocalState ref = clean.local_V(local_block(g, x, i), view_of(g, clean, x), slopes);
    const dist::LocalState central = local_block(g, Vx, i);
    CHECK((out.u - ref.u).norm() == 0.0);
    CHECK((out.p - ref.p).norm() == 0.0);
    CHECK((out.y - ref.y).norm() == 0.0);
    CHECK((out.u - central.u).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((out.p - central.p).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((out.y - central.y).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("transport rejects stale rounds and unknown edges") {
  dist::InProcessTransport tr({{1}, {0}}, {{1}, {0}});
  dist::RoundMessage msg;
  msg.sender = 0;
  msg.receiver = 1;
  msg.channel = dist::Channel::Operator;
  msg.round = 3;
  msg.payload = Eigen::VectorXd::Ones(2);
  tr.send(msg);
  msg.payload.setZero();  // the receiver holds a snapshot
  CHECK(tr.receive(1, 0, dist::Channel::Operator, 3).payload.sum() == 2.0);
  CHECK_THROWS_AS(tr.receive(1, 0, dist::Channel::Operator, 5), dist::ProtocolError);
  CHECK_THROWS_AS(tr.receive(1, 0, dist::Channel::Interference, 4), dist::ProtocolError);
  CHECK_THROWS_AS(tr.receive(0, 0, dist::Channel::Operator, 3), dist::ProtocolError);
}

TEST_CASE("simulation rejects unsupported settings and reports numerical failure") {
  const GameInstance g = generate_cournot(4, 2, 1, MarketPolicy::AllToAll);
  const CommGraph graph = build_cycle(4, 1.0);
  SolverParams p = params_for(g, graph, 3, 2);
  p.record_inner = true;
  CHECK_THROWS_AS(simulate(g, graph, p, 1), ConfigError);
  p.record_inner = false;
  CHECK_THROWS_AS(simulate(g, build_cycle(5, 1.0), p, 1), ConfigError);
  p.step = StepConfig::uniform(4, 1e200);
  for (int threads : {1, 4}) {
    try {
      simulate(g, graph, p, 1, SimOptions{threads, false});
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(e.epoch() == 0);
      CHECK(e.step() == 0);
    }
  }
}
