#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

namespace dvrsfbf {

/// Undirected weighted communication graph over the agents' dual copies.
struct CommGraph {
  Eigen::MatrixXd W;
  Eigen::MatrixXd L;
  Eigen::VectorXd eigenvalues;  // ascending spectrum of L
  double max_degree = 0.0;      // Delta
  double kappa = 0.0;           // spectral bound used in ell_V, set to s_N
  std::vector<std::vector<int>> neighbors;

  int size() const { return static_cast<int>(W.rows()); }
  double algebraic_connectivity() const { return size() > 1 ? eigenvalues(1) : 0.0; }
  double largest_eigenvalue() const { return eigenvalues(size() - 1); }

  /// out = (L kron I_m) v without forming the Kronecker product. `v` stacks
  /// one length-m block per agent.
  void apply_tensorized(const Eigen::Ref<const Eigen::VectorXd>& v, int m, Eigen::Ref<Eigen::VectorXd> out) const;
  /// Block i of (L kron I_m) v, i.e. sum_j w_ij (v_i - v_j).
  void apply_tensorized_block(int agent, const Eigen::Ref<const Eigen::VectorXd>& v, int m,
                              Eigen::Ref<Eigen::VectorXd> out) const;
};

/// Checks symmetry (1e-12), weights in [0,1], zero diagonal and
/// connectivity, then fills in the Laplacian and its spectrum.
/// Throws GraphError naming the offending pair.
CommGraph validate(const Eigen::MatrixXd& W);

CommGraph build_cycle(int N, double weight);
CommGraph build_complete(int N, double weight);

/// Dense L kron I_m. Refuses sizes above 2000; use apply_tensorized there.
Eigen::MatrixXd tensorize(const Eigen::MatrixXd& L, int m);

/// Edge list: optional "nodes N" line, then "i j w" per line (0-based),
/// '#' starts a comment. Each undirected edge is listed once.
CommGraph read_edge_list(std::istream& in);
void write_edge_list(std::ostream& out, const CommGraph& graph);

}  // namespace dvrsfbf
