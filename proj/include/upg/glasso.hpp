#pragma once

#include <string>
#include <vector>

#include "upg/types.hpp"

namespace upg {

// Jointly maintained precision/covariance estimate of the l1-penalized
// inverse covariance problem
//   minimize  -log det(Omega) + tr(S Omega) + rho * ||Omega||_1,  Omega > 0.
struct GlassoSolution {
  SparseMatrix omega;  // positive definite
  Matrix sigma;        // W = Omega^{-1}, kept in sync by the solver
  double rho = 0.0;
  double kkt_residual = 0.0;
  double objective = 0.0;
  int sweeps = 0;
  bool converged = true;
  // Objective after each full block sweep (only filled when
  // GlassoOptions::track_objective is set).
  std::vector<double> sweep_objectives;
};

struct GlassoOptions {
  // Sweep termination: max |change in W| over a full sweep <= tol * scale,
  // where scale = mean |off-diagonal of S| (diagonal mean when that is 0).
  double tol = 1e-4;
  double kkt_tol = 1e-5;
  int max_sweeps = 200;
  // The l1 norm in the criterion covers the whole matrix including the
  // diagonal; clearing this switches to the off-diagonal-only convention.
  bool penalize_diagonal = true;
  bool track_objective = false;
};

// Primal block-coordinate descent over rows/columns. Each block solves a
// lasso subproblem by coordinate descent with residual and active-set
// updates; Omega and W = Omega^{-1} are updated together in closed form per
// block, so the pair stays consistent and PD even when stopped early via
// max_sweeps. rho = 0 requires s PD and returns the plain inverse.
// The returned Omega is verified PD by a Cholesky factorization.
GlassoSolution glasso_fit(const Eigen::Ref<const Matrix>& s, double rho,
                          const GlassoOptions& opts = {},
                          const GlassoSolution* warm = nullptr);

// -log det(Omega) + tr(S Omega) + rho * penalty(Omega).
double glasso_objective(const Eigen::Ref<const Matrix>& omega,
                        const Eigen::Ref<const Matrix>& s, double rho,
                        bool penalize_diagonal = true);
double glasso_objective(const SparseMatrix& omega, const Eigen::Ref<const Matrix>& s,
                        double rho, bool penalize_diagonal = true);

// Max violation of the stationarity conditions:
//   W_ii = s_ii + rho (penalized diagonal),
//   |W_ij - s_ij - rho sign(Omega_ij)| for Omega_ij != 0,
//   max(0, |W_ij - s_ij| - rho)        for Omega_ij  = 0.
double glasso_kkt_residual(const Eigen::Ref<const Matrix>& omega,
                           const Eigen::Ref<const Matrix>& w,
                           const Eigen::Ref<const Matrix>& s, double rho,
                           bool penalize_diagonal = true);

// rho_ij = -Omega_ij / sqrt(Omega_ii Omega_jj), zero diagonal.
Matrix partial_correlations(const SparseMatrix& omega);

struct ScoredPair {
  int item_a = 0;  // item_a < item_b
  int item_b = 0;
  double value = 0.0;
};

// k pairs with the largest |value|; ties broken by (smaller index, larger
// index). k beyond J(J-1)/2 truncates.
std::vector<ScoredPair> top_pairs(const Eigen::Ref<const Matrix>& pc, int k);

// Edge list "item_id_a\titem_id_b\tomega_ij\tpartial_correlation" for the
// off-diagonal nonzeros, sorted by |partial_correlation| descending.
void write_graph_edges(const std::string& path, const SparseMatrix& omega,
                       const std::vector<std::string>& item_ids);

}  // namespace upg
