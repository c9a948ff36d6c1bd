#pragma once

#include "dvrsfbf/errors.hpp"
#include "dvrsfbf/game.hpp"
#include "dvrsfbf/graph.hpp"
#include "dvrsfbf/operators.hpp"
#include "dvrsfbf/solver.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

namespace dvrsfbf::dist {

/// An agent read a slot whose round tag does not match the round it is
/// executing, i.e. it computed before its inputs arrived.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

enum class RoundTag : std::uint8_t { OuterBroadcast = 0, HalfStep = 1, Correction = 2 };
enum class Channel : std::uint8_t { Interference = 0, Operator = 1 };

const char* to_string(RoundTag tag);
const char* to_string(Channel channel);

/// Interference payload: the sender's per-market supply A_i u_i (length m).
/// Operator payload: (p_i, y_i) stacked (length 2m).
struct RoundMessage {
  int sender = -1;
  int receiver = -1;
  RoundTag tag = RoundTag::OuterBroadcast;
  Channel channel = Channel::Interference;
  std::uint64_t round = 0;
  Eigen::VectorXd payload;
};

/// Exactly-once, per-round delivery between neighbours. Implementations
/// must make a message sent in round r readable by its receiver in round
/// r only, and must tolerate concurrent send() calls from different
/// senders.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(RoundMessage msg) = 0;
  /// Throws ProtocolError if the slot does not hold round `round`.
  virtual const RoundMessage& receive(int receiver, int sender, Channel channel, std::uint64_t round) const = 0;
};

/// Lock-free in-process transport: one double-buffered slot per directed
/// edge and channel, indexed by round parity. Safe as long as rounds are
/// separated by a barrier.
class InProcessTransport : public Transport {
 public:
  InProcessTransport(const std::vector<std::vector<int>>& interference, const std::vector<std::vector<int>>& op);
  void send(RoundMessage msg) override;
  const RoundMessage& receive(int receiver, int sender, Channel channel, std::uint64_t round) const override;

 private:
  std::size_t slot(int receiver, int sender, Channel channel) const;

  int N_ = 0;
  std::vector<std::int64_t> index_;  // (channel, receiver, sender) -> slot or -1
  std::vector<RoundMessage> slots_[2];
};

struct LocalState {
  Eigen::VectorXd u;  // d_i
  Eigen::VectorXd p;  // m
  Eigen::VectorXd y;  // m
};

/// Everything agent i knows about its neighbours at one point of the run,
/// in the order of its neighbour lists.
struct NeighborView {
  std::vector<Eigen::VectorXd> supply;  // A_j u_j, j in N_i^A
  std::vector<Eigen::VectorXd> dual;    // (p_j, y_j), j in N_i^y
};

/// One agent of the distributed protocol. Holds only its own cost data,
/// its capacity share, the public market data, its neighbour lists and
/// weights, and its local state. All cross-agent data enters through
/// NeighborView arguments built from received messages.
class AgentNode {
 public:
  AgentNode(const GameInstance& game, const CommGraph& graph, const StepConfig& step, int id);

  int id() const { return id_; }
  int markets() const { return m_; }
  const std::vector<int>& interference_neighbors() const { return nbr_a_; }
  const std::vector<int>& operator_neighbors() const { return nbr_y_; }

  const LocalState& state() const { return z_; }
  void set_state(LocalState s) { z_ = std::move(s); }

  /// A_i u_i for the given local primal block.
  Eigen::VectorXd supply_of(const Eigen::VectorXd& u) const;
  Eigen::VectorXd dual_of(const LocalState& s) const;

  /// Block i of V~ at a global point described by `own` and `view`, with
  /// the slope column seen by this agent.
  LocalState local_V(const LocalState& own, const NeighborView& view, const Eigen::VectorXd& slopes) const;

  /// Freezes x^t = current state with its neighbour view and computes the
  /// anchor estimate from the batch-mean slopes.
  void begin_epoch(const NeighborView& anchor_view, const Eigen::VectorXd& batch_slopes);
  /// z_half = J(z - Phi_i^-1 vbar_i). Purely local.
  void half_step();
  /// z = z_half - Phi_i^-1 (V~_i(z_half, xi) - V~_i(x^t, xi)).
  void correction(const NeighborView& half_view, const Eigen::VectorXd& slopes);

  const LocalState& half() const { return z_half_; }
  const LocalState& anchor() const { return x_t_; }
  /// Latest iterates of the neighbours as received in the correction round.
  const NeighborView& latest_view() const { return latest_; }
  void set_latest_view(NeighborView v) { latest_ = std::move(v); }

  bool finite() const;

 private:
  int id_ = 0;
  int m_ = 0;
  // Local problem data.
  std::vector<int> markets_;
  double cost_quad_ = 0.0;
  Eigen::VectorXd cost_lin_;
  Eigen::VectorXd box_upper_;
  Eigen::VectorXd capacity_share_;
  double shift_ = 0.0;
  // Public market data.
  Eigen::VectorXd intercept_;
  // Neighbourhoods. supply_order_ lists N_i^A and i itself in ascending
  // id; -1 marks the slot of the agent's own supply.
  std::vector<int> nbr_a_;
  std::vector<int> supply_order_;
  std::vector<int> nbr_y_;
  std::vector<double> weights_;
  double gamma_ = 0.0, sigma_ = 0.0, tau_ = 0.0;

  LocalState z_, z_half_, x_t_, vbar_;
  NeighborView anchor_view_, latest_;
};

/// Sent-message tallies of one agent.
struct AgentMessageStats {
  std::uint64_t interference = 0;
  std::uint64_t op = 0;
  std::uint64_t outer = 0;       // sent in outer-broadcast rounds
  std::uint64_t half_step = 0;
  std::uint64_t correction = 0;
  std::uint64_t bytes = 0;       // payload bytes

  std::uint64_t total() const { return interference + op; }
};

struct TraceEntry {
  std::uint64_t round = 0;
  int epoch = 0;
  int step = -1;  // inner index, -1 for outer broadcasts
  RoundTag tag = RoundTag::OuterBroadcast;
  Channel channel = Channel::Interference;
  int sender = 0;
  int receiver = 0;
  std::size_t bytes = 0;
};

struct SimOptions {
  /// Worker threads; 0 means one per agent. Agents are split into
  /// contiguous blocks.
  int threads = 1;
  bool trace = false;
};

struct SimResult {
  Trajectory trajectory;
  std::vector<AgentMessageStats> messages;  // indexed by agent
  std::vector<TraceEntry> trace;            // sorted by (round, sender, channel, receiver)
  std::uint64_t rounds = 0;
};

/// DVRSFBF as a synchronous message-passing protocol. Each epoch has
/// one outer broadcast round followed by a half-step and a correction
/// round per inner step. Same mathematics and random streams as
/// dvrsfbf_run, so trajectories agree with the centralized solver.
SimResult simulate(const GameInstance& game, const CommGraph& graph, const SolverParams& params,
                   std::uint64_t master_seed, const SimOptions& options = {}, const RunContext& ctx = {});

const std::vector<AgentMessageStats>& message_stats(const SimResult& run);

/// One line per message: "round epoch step tag channel sender receiver bytes".
void write_trace(std::ostream& out, const SimResult& run);

}  // namespace dvrsfbf::dist
