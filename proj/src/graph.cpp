#include "dvrsfbf/graph.hpp"

#include "dvrsfbf/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace dvrsfbf {

namespace {

std::string pair_str(int i, int j) { return "(" + std::to_string(i) + ", " + std::to_string(j) + ")"; }

}  // namespace

CommGraph validate(const Eigen::MatrixXd& W) {
  if (W.rows() != W.cols() || W.rows() == 0)
    throw GraphError(GraphError::Kind::NotSquare, -1, -1, "adjacency must be a non-empty square matrix");
  const int N = static_cast<int>(W.rows());
  for (int i = 0; i < N; ++i) {
    if (W(i, i) != 0.0)
      throw GraphError(GraphError::Kind::WeightOutOfRange, i, i, "nonzero diagonal weight at " + pair_str(i, i));
    for (int j = 0; j < N; ++j) {
      if (!(W(i, j) >= 0.0 && W(i, j) <= 1.0))
        throw GraphError(GraphError::Kind::WeightOutOfRange, i, j, "weight outside [0,1] at " + pair_str(i, j));
      if (std::abs(W(i, j) - W(j, i)) > 1e-12)
        throw GraphError(GraphError::Kind::AsymmetricW, i, j, "w_ij != w_ji at " + pair_str(i, j));
    }
  }

  CommGraph g;
  g.W = W;
  g.neighbors.assign(N, {});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      if (W(i, j) > 0.0) g.neighbors[i].push_back(j);

  // Connectivity by traversal from agent 0.
  std::vector<char> seen(N, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j : g.neighbors[i])
      if (!seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
  }
  for (int i = 0; i < N; ++i)
    if (!seen[i])
      throw GraphError(GraphError::Kind::DisconnectedGraph, 0, i,
                       "agents " + pair_str(0, i) + " are not connected");

  const Eigen::VectorXd degree = W.rowwise().sum();
  g.L = Eigen::MatrixXd(degree.asDiagonal()) - W;
  g.max_degree = degree.maxCoeff();
  g.eigenvalues = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g.L, Eigen::EigenvaluesOnly).eigenvalues();
  g.kappa = g.eigenvalues(N - 1);
  return g;
}

CommGraph build_cycle(int N, double weight) {
  if (N < 2) throw ConfigError("cycle graph needs N >= 2");
  if (!(weight > 0.0 && weight <= 1.0)) throw ConfigError("cycle weight must lie in (0,1]");
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) {
    const int j = (i + 1) % N;
    W(i, j) = W(j, i) = weight;
  }
  return validate(W);
}

CommGraph build_complete(int N, double weight) {
  if (N < 1) throw ConfigError("complete graph needs N >= 1");
  if (!(weight > 0.0 && weight <= 1.0)) throw ConfigError("edge weight must lie in (0,1]");
  Eigen::MatrixXd W = Eigen::MatrixXd::Constant(N, N, weight);
  W.diagonal().setZero();
  return validate(W);
}

void CommGraph::apply_tensorized_block(int agent, const Eigen::Ref<const Eigen::VectorXd>& v, int m,
                                       Eigen::Ref<Eigen::VectorXd> out) const {
  out.setZero();
  const auto vi = v.segment(agent * m, m);
  for (int j : neighbors[agent]) out.noalias() += W(agent, j) * (vi - v.segment(j * m, m));
}

void CommGraph::apply_tensorized(const Eigen::Ref<const Eigen::VectorXd>& v, int m,
                                 Eigen::Ref<Eigen::VectorXd> out) const {
  const int N = size();
  if (v.size() != N * m || out.size() != N * m) throw ConfigError("tensorized Laplacian: dimension mismatch");
  for (int i = 0; i < N; ++i) apply_tensorized_block(i, v, m, out.segment(i * m, m));
}

Eigen::MatrixXd tensorize(const Eigen::MatrixXd& L, int m) {
  const Eigen::Index n = L.rows() * m;
  if (n > 2000) throw ConfigError("tensorize: refusing to materialize a " + std::to_string(n) + "-dim operator");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    for (Eigen::Index j = 0; j < L.cols(); ++j)
      out.block(i * m, j * m, m, m).diagonal().setConstant(L(i, j));
  return out;
}

CommGraph read_edge_list(std::istream& in) {
  struct Edge {
    int i, j;
    double w;
  };
  std::vector<Edge> edges;
  int nodes = -1;
  int max_index = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first == "nodes") {
      if (!(ls >> nodes) || nodes < 1) throw ConfigError("edge list line " + std::to_string(lineno) + ": bad node count");
      continue;
    }
    Edge e{};
    try {
      e.i = std::stoi(first);
    } catch (const std::exception&) {
      throw ConfigError("edge list line " + std::to_string(lineno) + ": expected 'i j w'");
    }
    if (!(ls >> e.j >> e.w) || e.i < 0 || e.j < 0)
      throw ConfigError("edge list line " + std::to_string(lineno) + ": expected 'i j w'");
    max_index = std::max({max_index, e.i, e.j});
    edges.push_back(e);
  }
  const int N = nodes > 0 ? nodes : max_index + 1;
  if (N < 1) throw ConfigError("edge list is empty");
  if (max_index >= N) throw ConfigError("edge list references node beyond 'nodes'");
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
  for (const auto& e : edges) {
    W(e.i, e.j) = e.w;
    W(e.j, e.i) = e.w;
  }
  return validate(W);
}

void write_edge_list(std::ostream& out, const CommGraph& graph) {
  const int N = graph.size();
  out << "nodes " << N << "\n";
  out.precision(17);
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      if (graph.W(i, j) > 0.0) out << i << " " << j << " " << graph.W(i, j) << "\n";
}

}  // namespace dvrsfbf
