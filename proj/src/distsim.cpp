#include "dvrsfbf/distsim.hpp"

#include "dvrsfbf/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <exception>
#include <ostream>
#include <thread>
#include <tuple>

namespace dvrsfbf::dist {

const char* to_string(RoundTag tag) {
  switch (tag) {
    case RoundTag::OuterBroadcast: return "outer";
    case RoundTag::HalfStep: return "half";
    case RoundTag::Correction: return "correction";
  }
  return "?";
}

const char* to_string(Channel channel) { return channel == Channel::Interference ? "interference" : "operator"; }

InProcessTransport::InProcessTransport(const std::vector<std::vector<int>>& interference,
                                       const std::vector<std::vector<int>>& op)
    : N_(static_cast<int>(interference.size())) {
  index_.assign(2 * static_cast<std::size_t>(N_) * N_, -1);
  std::int64_t next = 0;
  auto add = [&](const std::vector<std::vector<int>>& lists, Channel ch) {
    for (int sender = 0; sender < N_; ++sender)
      for (int receiver : lists[sender]) {
        auto& slot_id = index_[(static_cast<std::size_t>(ch) * N_ + receiver) * N_ + sender];
        if (slot_id < 0) slot_id = next++;
      }
  };
  add(interference, Channel::Interference);
  add(op, Channel::Operator);
  for (auto& buf : slots_) buf.assign(static_cast<std::size_t>(next), RoundMessage{});
  for (auto& buf : slots_)
    for (auto& msg : buf) msg.round = ~std::uint64_t{0};
}

std::size_t InProcessTransport::slot(int receiver, int sender, Channel channel) const {
  if (receiver < 0 || receiver >= N_ || sender < 0 || sender >= N_)
    throw ProtocolError("transport: agent index out of range");
  const std::int64_t s = index_[(static_cast<std::size_t>(channel) * N_ + receiver) * N_ + sender];
  if (s < 0)
    throw ProtocolError("transport: no " + std::string(to_string(channel)) + " edge " + std::to_string(sender) +
                        " -> " + std::to_string(receiver));
  return static_cast<std::size_t>(s);
}

void InProcessTransport::send(RoundMessage msg) {
  const std::size_t s = slot(msg.receiver, msg.sender, msg.channel);
  slots_[msg.round & 1][s] = std::move(msg);
}

const RoundMessage& InProcessTransport::receive(int receiver, int sender, Channel channel, std::uint64_t round) const {
  const RoundMessage& msg = slots_[round & 1][slot(receiver, sender, channel)];
  if (msg.round != round)
    throw ProtocolError("agent " + std::to_string(receiver) + " expected round " + std::to_string(round) + " from " +
                        std::to_string(sender) + " on the " + to_string(channel) + " channel, slot holds round " +
                        std::to_string(static_cast<long long>(msg.round)));
  return msg;
}

AgentNode::AgentNode(const GameInstance& game, const CommGraph& graph, const StepConfig& step, int id)
    : id_(id), m_(game.num_markets()) {
  const Player& pl = game.players.at(static_cast<std::size_t>(id));
  markets_ = pl.markets;
  cost_quad_ = pl.cost_quad;
  cost_lin_ = pl.cost_lin;
  box_upper_ = pl.box_upper;
  capacity_share_ = game.local_capacity(id);
  shift_ = game.monotone_shift;
  intercept_ = game.demand_intercept;

  nbr_a_ = dvrsfbf::interference_neighbors(game)[static_cast<std::size_t>(id)];
  bool placed = false;
  for (std::size_t s = 0; s < nbr_a_.size(); ++s) {
    if (!placed && nbr_a_[s] > id) {
      supply_order_.push_back(-1);
      placed = true;
    }
    supply_order_.push_back(static_cast<int>(s));
  }
  if (!placed) supply_order_.push_back(-1);

  nbr_y_ = graph.neighbors[static_cast<std::size_t>(id)];
  for (int j : nbr_y_) weights_.push_back(graph.W(id, j));
  gamma_ = step.gamma(id);
  sigma_ = step.sigma(id);
  tau_ = step.tau(id);

  z_.u = 0.5 * box_upper_;
  z_.p = Eigen::VectorXd::Zero(m_);
  z_.y = Eigen::VectorXd::Zero(m_);
}

Eigen::VectorXd AgentNode::supply_of(const Eigen::VectorXd& u) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m_);
  for (std::size_t k = 0; k < markets_.size(); ++k) out(markets_[k]) = u(static_cast<Eigen::Index>(k));
  return out;
}

Eigen::VectorXd AgentNode::dual_of(const LocalState& s) const {
  Eigen::VectorXd out(2 * m_);
  out << s.p, s.y;
  return out;
}

LocalState AgentNode::local_V(const LocalState& own, const NeighborView& view, const Eigen::VectorXd& slopes) const {
  if (view.supply.size() != nbr_a_.size() || view.dual.size() != nbr_y_.size())
    throw ProtocolError("agent " + std::to_string(id_) + ": incomplete neighbour view");

  // [A u]_j summed over the firms of market j in ascending id.
  Eigen::VectorXd supply = Eigen::VectorXd::Zero(m_);
  const Eigen::VectorXd mine = supply_of(own.u);
  for (int s : supply_order_) supply += s < 0 ? mine : view.supply[static_cast<std::size_t>(s)];

  LocalState out;
  const int d = static_cast<int>(markets_.size());
  out.u.resize(d);
  const double total = own.u.sum();
  for (int k = 0; k < d; ++k) {
    const int j = markets_[k];
    const double uk = own.u(k);
    out.u(k) = 2.0 * cost_quad_ * total + cost_lin_(k) - intercept_(j) + slopes(j) * (supply(j) + uk) - shift_ * uk;
    out.u(k) += own.y(j);
  }

  out.p = Eigen::VectorXd::Zero(m_);
  for (std::size_t n = 0; n < nbr_y_.size(); ++n) out.p.noalias() += weights_[n] * (own.y - view.dual[n].tail(m_));

  out.y = capacity_share_;
  for (std::size_t n = 0; n < nbr_y_.size(); ++n) {
    const auto pj = view.dual[n].head(m_);
    const auto yj = view.dual[n].tail(m_);
    out.y.noalias() += weights_[n] * ((own.y - yj) - (own.p - pj));
  }
  for (int k = 0; k < d; ++k) out.y(markets_[k]) -= own.u(k);
  return out;
}

void AgentNode::begin_epoch(const NeighborView& anchor_view, const Eigen::VectorXd& batch_slopes) {
  x_t_ = z_;
  anchor_view_ = anchor_view;
  vbar_ = local_V(x_t_, anchor_view_, batch_slopes);
}

void AgentNode::half_step() {
  z_half_.u = (z_.u.array() - gamma_ * vbar_.u.array()).matrix();
  z_half_.u = z_half_.u.cwiseMax(0.0).cwiseMin(box_upper_);
  z_half_.p = (z_.p.array() - sigma_ * vbar_.p.array()).matrix();
  z_half_.y = (z_.y.array() - tau_ * vbar_.y.array()).matrix();
  z_half_.y = z_half_.y.cwiseMax(0.0);
}

void AgentNode::correction(const NeighborView& half_view, const Eigen::VectorXd& slopes) {
  const LocalState vh = local_V(z_half_, half_view, slopes);
  const LocalState va = local_V(x_t_, anchor_view_, slopes);
  z_.u = (z_half_.u.array() - gamma_ * (vh.u - va.u).array()).matrix();
  z_.p = (z_half_.p.array() - sigma_ * (vh.p - va.p).array()).matrix();
  z_.y = (z_half_.y.array() - tau_ * (vh.y - va.y).array()).matrix();
}

bool AgentNode::finite() const { return z_.u.allFinite() && z_.p.allFinite() && z_.y.allFinite(); }

namespace {

struct HaltSnapshot {
  const std::atomic<bool>* failed;
  bool* halt;
  void operator()() noexcept { *halt = failed->load(); }
};

struct Layout {
  const GameInstance& game;

  State assemble(const std::vector<LocalState>& parts) const {
    const int m = game.num_markets();
    State x = State::zeros(game);
    for (int i = 0; i < game.num_players(); ++i) {
      const auto& s = parts[static_cast<std::size_t>(i)];
      x.u().segment(game.offset(i), game.players[i].dim()) = s.u;
      x.p().segment(i * m, m) = s.p;
      x.y().segment(i * m, m) = s.y;
    }
    return x;
  }
};

void accumulate(LocalState& acc, const LocalState& s) {
  acc.u += s.u;
  acc.p += s.p;
  acc.y += s.y;
}

void scale(LocalState& acc, double by) {
  acc.u /= by;
  acc.p /= by;
  acc.y /= by;
}

LocalState zeros_like(const LocalState& s) {
  return {Eigen::VectorXd::Zero(s.u.size()), Eigen::VectorXd::Zero(s.p.size()), Eigen::VectorXd::Zero(s.y.size())};
}

Eigen::VectorXd column_for(const SlopeDraw& draw, int agent) { return draw.for_player(agent); }

}  // namespace

SimResult simulate(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                   std::uint64_t master_seed, const SimOptions& options, const RunContext& ctx) {
  const int N = game.num_players();
  params.validate(N);
  check_step_policy(game, graph, params);
  if (params.record_inner) throw ConfigError("simulate: inner-step recording is not supported");
  if (graph.size() != N) throw ConfigError("simulate: graph size does not match the number of players");

  SimResult result;
  Trajectory& traj = result.trajectory;
  traj.algorithm = "dvrsfbf";
  TrajectoryRecorder rec(game, graph, params, ctx, traj);
  result.messages.assign(static_cast<std::size_t>(N), {});

  std::vector<AgentNode> agents;
  agents.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) agents.emplace_back(game, graph, params.step, i);

  const Layout layout{game};
  auto snapshot = [&](auto get) {
    std::vector<LocalState> parts;
    parts.reserve(agents.size());
    for (const auto& a : agents) parts.push_back(get(a));
    return layout.assemble(parts);
  };
  if (rec.record(0, snapshot([](const AgentNode& a) { return a.state(); }), 0) || params.T == 0) return result;

  const NoiseModel noise = NoiseModel::from_game(game);
  const int columns = params.per_agent_noise ? N : 1;
  const bool averaging = params.averaging || params.mode == Mode::Monotone;

  std::vector<std::vector<int>> nbr_a(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) nbr_a[static_cast<std::size_t>(i)] = agents[static_cast<std::size_t>(i)].interference_neighbors();
  InProcessTransport transport(nbr_a, graph.neighbors);

  const int workers = std::clamp(options.threads <= 0 ? N : options.threads, 1, N);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(N) + 1);
  std::atomic<bool> failed{false};
  bool stop = false;
  // Snapshot of `failed` taken once per phase, so every worker leaves a
  // barrier with the same verdict even if the next phase fails early.
  bool halt = false;
  std::barrier sync(workers, HaltSnapshot{&failed, &halt});
  std::vector<std::vector<TraceEntry>> traces(static_cast<std::size_t>(N));
  std::vector<LocalState> avg_epoch(static_cast<std::size_t>(N)), avg_total(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    avg_total[static_cast<std::size_t>(i)] = zeros_like(agents[static_cast<std::size_t>(i)].state());
    avg_epoch[static_cast<std::size_t>(i)] = avg_total[static_cast<std::size_t>(i)];
  }
  std::uint64_t rounds_used = 0;

  auto post = [&](int i, const LocalState& s, RoundTag tag, std::uint64_t round, int t, int k) {
    const AgentNode& a = agents[static_cast<std::size_t>(i)];
    AgentMessageStats& st = result.messages[static_cast<std::size_t>(i)];
    auto tally = [&](Channel ch, int receiver, const Eigen::VectorXd& payload) {
      const std::size_t bytes = static_cast<std::size_t>(payload.size()) * sizeof(double);
      (ch == Channel::Interference ? st.interference : st.op)++;
      (tag == RoundTag::OuterBroadcast ? st.outer : tag == RoundTag::HalfStep ? st.half_step : st.correction)++;
      st.bytes += bytes;
      if (options.trace) traces[static_cast<std::size_t>(i)].push_back({round, t, k, tag, ch, i, receiver, bytes});
      transport.send(RoundMessage{i, receiver, tag, ch, round, payload});
    };
    if (!a.interference_neighbors().empty()) {
      const Eigen::VectorXd supply = a.supply_of(s.u);
      for (int j : a.interference_neighbors()) tally(Channel::Interference, j, supply);
    }
    if (!a.operator_neighbors().empty()) {
      const Eigen::VectorXd dual = a.dual_of(s);
      for (int j : a.operator_neighbors()) tally(Channel::Operator, j, dual);
    }
  };

  auto collect = [&](int i, RoundTag tag, std::uint64_t round) {
    const AgentNode& a = agents[static_cast<std::size_t>(i)];
    NeighborView view;
    for (int j : a.interference_neighbors()) {
      const RoundMessage& msg = transport.receive(i, j, Channel::Interference, round);
      if (msg.tag != tag) throw ProtocolError("agent " + std::to_string(i) + " received a " + to_string(msg.tag) +
                                              " message while expecting " + to_string(tag));
      view.supply.push_back(msg.payload);
    }
    for (int j : a.operator_neighbors()) {
      const RoundMessage& msg = transport.receive(i, j, Channel::Operator, round);
      if (msg.tag != tag) throw ProtocolError("agent " + std::to_string(i) + " received a " + to_string(msg.tag) +
                                              " message while expecting " + to_string(tag));
      view.dual.push_back(msg.payload);
    }
    return view;
  };

  auto draw_for = [&](int t, Phase phase, int k, std::uint64_t S, const Eigen::VectorXd& mean) {
    Stream s = stream(master_seed, StreamKey{params.replicate, static_cast<std::uint64_t>(t), phase,
                                             static_cast<std::uint64_t>(k), StreamKey::kShared});
    if (phase == Phase::OuterBatch) return draw_batch(mean, noise.variance, columns, S, s).mean_slopes;
    return draw_slopes(mean, noise.variance, columns, s);
  };

  auto worker = [&](int w) {
    const int lo = static_cast<int>(static_cast<long long>(N) * w / workers);
    const int hi = static_cast<int>(static_cast<long long>(N) * (w + 1) / workers);
    auto each = [&](auto&& fn) {
      for (int i = lo; i < hi; ++i) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
          failed.store(true);
        }
      }
    };
    auto barrier = [&] {
      sync.arrive_and_wait();
      return halt;
    };

    std::uint64_t round = 0;
    for (int t = 0; t < params.T; ++t) {
      const std::uint64_t S = params.schedule.size(t);
      const Eigen::VectorXd mean = epoch_sampling_mean(noise, params, master_seed, t, S);

      const std::uint64_t outer = ++round;
      each([&](int i) { post(i, agents[static_cast<std::size_t>(i)].state(), RoundTag::OuterBroadcast, outer, t, -1); });
      if (barrier()) return;

      const SlopeDraw batch{draw_for(t, Phase::OuterBatch, 0, S, mean)};
      const std::uint64_t first_half = ++round;
      each([&](int i) {
        AgentNode& a = agents[static_cast<std::size_t>(i)];
        a.begin_epoch(collect(i, RoundTag::OuterBroadcast, outer), column_for(batch, i));
        if (averaging) avg_epoch[static_cast<std::size_t>(i)] = zeros_like(a.state());
        a.half_step();
        post(i, a.half(), RoundTag::HalfStep, first_half, t, 0);
      });
      if (barrier()) return;

      for (int k = 0; k < params.K; ++k) {
        const std::uint64_t half_round = round;
        const SlopeDraw xi{draw_for(t, Phase::InnerStep, k, 1, mean)};
        const std::uint64_t corr = ++round;
        each([&](int i) {
          AgentNode& a = agents[static_cast<std::size_t>(i)];
          a.correction(collect(i, RoundTag::HalfStep, half_round), column_for(xi, i));
          if (!a.finite())
            throw NumericalError("non-finite state at agent " + std::to_string(i) + ", epoch " + std::to_string(t) +
                                     ", step " + std::to_string(k),
                                 t, k);
          if (averaging) accumulate(avg_epoch[static_cast<std::size_t>(i)], a.half());
          post(i, a.state(), RoundTag::Correction, corr, t, k);
        });
        if (barrier()) return;

        const bool more = k + 1 < params.K;
        const std::uint64_t next = more ? ++round : 0;
        each([&](int i) {
          AgentNode& a = agents[static_cast<std::size_t>(i)];
          a.set_latest_view(collect(i, RoundTag::Correction, corr));
          if (more) {
            a.half_step();
            post(i, a.half(), RoundTag::HalfStep, next, t, k + 1);
          }
        });
        if (barrier()) return;
      }

      // Metrics: the only place where global state is assembled.
      if (w == 0) {
        try {
          traj.total_oracles += S + 2ULL * static_cast<std::uint64_t>(params.K);
          traj.estimator_oracles += S;
          if (averaging) {
            for (int i = 0; i < N; ++i) {
              scale(avg_epoch[static_cast<std::size_t>(i)], static_cast<double>(params.K));
              accumulate(avg_total[static_cast<std::size_t>(i)], avg_epoch[static_cast<std::size_t>(i)]);
            }
            traj.epoch_averages.push_back(layout.assemble(avg_epoch));
          }
          stop = rec.record(t + 1, snapshot([](const AgentNode& a) { return a.state(); }), S);
          rounds_used = round;
        } catch (...) {
          errors[static_cast<std::size_t>(N)] = std::current_exception();
          failed.store(true);
        }
      }
      if (barrier() || stop) return;
    }
  };

  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker, w);
    worker(0);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (averaging && !traj.epoch_averages.empty()) {
    for (auto& s : avg_total) scale(s, static_cast<double>(traj.epoch_averages.size()));
    traj.averaged = layout.assemble(avg_total);
  }
  result.rounds = rounds_used;
  if (options.trace) {
    for (auto& tr : traces) result.trace.insert(result.trace.end(), tr.begin(), tr.end());
    std::sort(result.trace.begin(), result.trace.end(), [](const TraceEntry& a, const TraceEntry& b) {
      return std::tie(a.round, a.sender, a.channel, a.receiver) < std::tie(b.round, b.sender, b.channel, b.receiver);
    });
  }
  return result;
}

const std::vector<AgentMessageStats>& message_stats(const SimResult& run) { return run.messages; }

void write_trace(std::ostream& out, const SimResult& run) {
  out << "# round epoch step tag channel sender receiver bytes\n";
  for (const auto& e : run.trace)
    out << e.round << ' ' << e.epoch << ' ' << e.step << ' ' << to_string(e.tag) << ' ' << to_string(e.channel) << ' '
        << e.sender << ' ' << e.receiver << ' ' << e.bytes << '\n';
}

}  // namespace dvrsfbf::dist
