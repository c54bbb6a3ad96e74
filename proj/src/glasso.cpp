#include "upg/glasso.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "upg/linalg.hpp"

namespace upg {

namespace {

double l1_norm(const Eigen::Ref<const Matrix>& m, bool include_diagonal) {
  double s = m.cwiseAbs().sum();
  if (!include_diagonal) s -= m.diagonal().cwiseAbs().sum();
  return s;
}

double log_det_from_llt(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

Matrix densify(const SparseMatrix& m) { return Matrix(m); }

SparseMatrix sparsify(const Eigen::Ref<const Matrix>& dense) {
  std::vector<Eigen::Triplet<double>> trips;
  const int dim = int(dense.rows());
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < dim; ++i)
      if (dense(i, j) != 0.0 || i == j) trips.emplace_back(i, j, dense(i, j));
  SparseMatrix out(dim, dim);
  out.setFromTriplets(trips.begin(), trips.end());
  out.makeCompressed();
  return out;
}

// Lasso subproblem  min 1/2 a_scale * x'Qx + b'x + rho ||x||_1 by coordinate
// descent. grad = a_scale*Q*x + b is maintained under single-coordinate
// updates; coordinates at zero whose gradient sits inside the threshold are
// skipped in O(1). Returns the max stationarity violation.
double lasso_cd(const Eigen::Ref<const Matrix>& q, double a_scale,
                const Eigen::Ref<const Vector>& b, double rho, Vector& x, Vector& grad,
                double inner_tol, int max_pass) {
  const int n = int(x.size());
  if (n == 0) return 0.0;
  grad = a_scale * (q * x) + b;
  double viol = 0.0;
  for (int pass = 0; pass < max_pass; ++pass) {
    for (int k = 0; k < n; ++k) {
      double akk = a_scale * q(k, k);
      if (akk <= 0.0) throw std::runtime_error("glasso_fit: lasso block not positive definite");
      if (x[k] == 0.0 && std::abs(grad[k]) <= rho) continue;
      double c = grad[k] - akk * x[k];
      double x_new = -soft_threshold(c, rho) / akk;
      double delta = x_new - x[k];
      if (delta != 0.0) {
        grad += (a_scale * delta) * q.col(k);
        x[k] = x_new;
      }
    }
    viol = 0.0;
    for (int k = 0; k < n; ++k) {
      double v = x[k] != 0.0 ? std::abs(grad[k] + rho * (x[k] > 0 ? 1.0 : -1.0))
                             : std::max(0.0, std::abs(grad[k]) - rho);
      viol = std::max(viol, v);
    }
    if (viol <= inner_tol) break;
  }
  return viol;
}

}  // namespace

double glasso_objective(const Eigen::Ref<const Matrix>& omega,
                        const Eigen::Ref<const Matrix>& s, double rho,
                        bool penalize_diagonal) {
  Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("glasso_objective: omega not positive definite");
  return -log_det_from_llt(llt) + (s.transpose() * omega).trace() +
         rho * l1_norm(omega, penalize_diagonal);
}

double glasso_objective(const SparseMatrix& omega, const Eigen::Ref<const Matrix>& s,
                        double rho, bool penalize_diagonal) {
  return glasso_objective(densify(omega), s, rho, penalize_diagonal);
}

double glasso_kkt_residual(const Eigen::Ref<const Matrix>& omega,
                           const Eigen::Ref<const Matrix>& w,
                           const Eigen::Ref<const Matrix>& s, double rho,
                           bool penalize_diagonal) {
  const int dim = int(omega.rows());
  double worst = 0.0;
  for (int i = 0; i < dim; ++i) {
    double diag_target = s(i, i) + (penalize_diagonal ? rho : 0.0);
    worst = std::max(worst, std::abs(w(i, i) - diag_target));
    for (int j = i + 1; j < dim; ++j) {
      double gap = w(i, j) - s(i, j);
      double v = omega(i, j) != 0.0
                     ? std::abs(gap - rho * (omega(i, j) > 0 ? 1.0 : -1.0))
                     : std::max(0.0, std::abs(gap) - rho);
      worst = std::max(worst, v);
    }
  }
  return worst;
}

GlassoSolution glasso_fit(const Eigen::Ref<const Matrix>& s, double rho,
                          const GlassoOptions& opts, const GlassoSolution* warm) {
  const int dim = int(s.rows());
  if (s.cols() != dim || dim < 1) throw std::invalid_argument("glasso_fit: s must be square");
  if (rho < 0.0) throw std::invalid_argument("glasso_fit: rho must be >= 0");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + s.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("glasso_fit: s must be symmetric");
  if (s.diagonal().minCoeff() < 0.0)
    throw std::invalid_argument("glasso_fit: s must have nonnegative diagonal");

  GlassoSolution sol;
  sol.rho = rho;

  if (rho == 0.0) {
    // Unregularized MLE: Omega = S^{-1} in closed form.
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("glasso_fit: unregularized MLE does not exist (s not PD)");
    Matrix omega = llt.solve(Matrix::Identity(dim, dim));
    omega = ((omega + omega.transpose()) / 2.0).eval();
    sol.sigma = s;
    sol.omega = sparsify(omega);
    sol.kkt_residual = glasso_kkt_residual(omega, sol.sigma, s, 0.0, opts.penalize_diagonal);
    sol.objective = glasso_objective(omega, s, 0.0, opts.penalize_diagonal);
    Eigen::LLT<Matrix> check(omega);
    if (check.info() != Eigen::Success)
      throw std::runtime_error("glasso_fit: returned precision is not positive definite");
    return sol;
  }

  const double diag_rho = opts.penalize_diagonal ? rho : 0.0;
  for (int i = 0; i < dim; ++i)
    if (s(i, i) + diag_rho <= 0.0)
      throw std::runtime_error("glasso_fit: zero-variance coordinate with no diagonal penalty");

  double off_sum = 0.0;
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j) off_sum += std::abs(s(i, j));
  double scale = dim > 1 ? off_sum / (double(dim) * double(dim - 1) / 2.0) : 0.0;
  if (scale == 0.0) scale = std::max(s.diagonal().mean(), 1e-12);

  Matrix omega, w;
  if (warm && warm->omega.rows() == dim) {
    omega = densify(warm->omega);
    if (warm->sigma.rows() == dim) {
      w = warm->sigma;
    } else {
      Eigen::LLT<Matrix> llt(omega);
      if (llt.info() != Eigen::Success) throw std::runtime_error("glasso_fit: warm start not PD");
      w = llt.solve(Matrix::Identity(dim, dim));
    }
  } else {
    omega = Matrix::Zero(dim, dim);
    w = Matrix::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) {
      w(i, i) = s(i, i) + diag_rho;
      omega(i, i) = 1.0 / w(i, i);
    }
  }

  std::vector<int> others(std::size_t(dim > 1 ? dim - 1 : 0));
  Matrix q(dim - 1 >= 0 ? dim - 1 : 0, dim - 1 >= 0 ? dim - 1 : 0);
  Vector alpha(std::max(dim - 1, 0)), grad(std::max(dim - 1, 0)), b(std::max(dim - 1, 0)),
      qa(std::max(dim - 1, 0)), w_col_old(std::max(dim - 1, 0));

  double inner_tol = std::max(0.3 * opts.kkt_tol, 1e-2 * scale);
  bool converged = false;
  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int j = 0; j < dim; ++j) {
      int idx = 0;
      for (int i = 0; i < dim; ++i)
        if (i != j) others[std::size_t(idx++)] = i;
      const double a_scale = s(j, j) + diag_rho;
      if (dim > 1) {
        // Q = (Omega_11)^{-1} = W_oo - w_oj w_oj'/w_jj for the current column.
        q = w(others, others);
        Vector w_oj = w(others, j);
        q.noalias() -= (w_oj / w(j, j)) * w_oj.transpose();
        alpha = omega(others, j);
        b = s(others, j);
        lasso_cd(q, a_scale, b, rho, alpha, grad, inner_tol, 1000);
        qa = (grad - b) / a_scale;  // Q * alpha recovered from the gradient
        double omega_jj = 1.0 / a_scale + alpha.dot(qa);

        w_col_old = w_oj;
        double w_jj_old = w(j, j);
        omega(others, j) = alpha;
        omega(j, others) = alpha.transpose();
        omega(j, j) = omega_jj;
        q.noalias() += a_scale * qa * qa.transpose();
        w(others, others) = q;
        Vector w_oj_new = -a_scale * qa;
        w(others, j) = w_oj_new;
        w(j, others) = w_oj_new.transpose();
        w(j, j) = a_scale;
        max_change = std::max(max_change, (w_oj_new - w_col_old).cwiseAbs().maxCoeff());
        max_change = std::max(max_change, std::abs(a_scale - w_jj_old));
      } else {
        max_change = std::max(max_change, std::abs(a_scale - w(0, 0)));
        omega(0, 0) = 1.0 / a_scale;
        w(0, 0) = a_scale;
      }
    }
    if (opts.track_objective)
      sol.sweep_objectives.push_back(glasso_objective(omega, s, rho, opts.penalize_diagonal));
    double kkt = glasso_kkt_residual(omega, w, s, rho, opts.penalize_diagonal);
    inner_tol = std::max(0.3 * opts.kkt_tol, 0.05 * max_change);
    if (max_change <= opts.tol * scale && kkt <= opts.kkt_tol) {
      converged = true;
      ++sweep;
      break;
    }
  }

  // Guard against numerical drift of the incrementally maintained inverse.
  double inv_err = (omega * w - Matrix::Identity(dim, dim)).cwiseAbs().maxCoeff();
  if (inv_err > 1e-8) {
    Eigen::LLT<Matrix> llt(omega);
    if (llt.info() == Eigen::Success) w = llt.solve(Matrix::Identity(dim, dim));
  }

  sol.sweeps = sweep;
  sol.converged = converged;
  sol.sigma = w;
  sol.omega = sparsify(omega);
  sol.kkt_residual = glasso_kkt_residual(omega, w, s, rho, opts.penalize_diagonal);
  Eigen::LLT<Matrix> check(omega);
  if (check.info() != Eigen::Success)
    throw std::runtime_error("glasso_fit: returned precision is not positive definite");
  sol.objective = -log_det_from_llt(check) + (s.transpose() * omega).trace() +
                  rho * l1_norm(omega, opts.penalize_diagonal);
  return sol;
}

Matrix partial_correlations(const SparseMatrix& omega) {
  const int dim = int(omega.rows());
  Matrix dense = densify(omega);
  for (int i = 0; i < dim; ++i)
    if (dense(i, i) <= 0.0)
      throw std::runtime_error("partial_correlations: nonpositive diagonal entry");
  Matrix pc = Matrix::Zero(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      if (i != j) pc(i, j) = -dense(i, j) / std::sqrt(dense(i, i) * dense(j, j));
  return pc;
}

std::vector<ScoredPair> top_pairs(const Eigen::Ref<const Matrix>& pc, int k) {
  const int dim = int(pc.rows());
  std::vector<ScoredPair> pairs;
  pairs.reserve(std::size_t(dim) * std::size_t(std::max(dim - 1, 0)) / 2);
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j) pairs.push_back({i, j, pc(i, j)});
  auto cmp = [](const ScoredPair& a, const ScoredPair& b) {
    double av = std::abs(a.value), bv = std::abs(b.value);
    if (av != bv) return av > bv;
    if (a.item_a != b.item_a) return a.item_a < b.item_a;
    return a.item_b < b.item_b;
  };
  std::size_t keep = std::min<std::size_t>(std::size_t(std::max(k, 0)), pairs.size());
  std::partial_sort(pairs.begin(), pairs.begin() + long(keep), pairs.end(), cmp);
  pairs.resize(keep);
  return pairs;
}

void write_graph_edges(const std::string& path, const SparseMatrix& omega,
                       const std::vector<std::string>& item_ids) {
  Matrix pc = partial_correlations(omega);
  struct Edge {
    int i, j;
    double om, pc;
  };
  std::vector<Edge> edges;
  for (int k = 0; k < omega.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(omega, k); it; ++it)
      if (it.row() < it.col() && it.value() != 0.0)
        edges.push_back({int(it.row()), int(it.col()), it.value(), pc(it.row(), it.col())});
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    double av = std::abs(a.pc), bv = std::abs(b.pc);
    if (av != bv) return av > bv;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& e : edges) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "\t%.10g\t%.10g\n", e.om, e.pc);
    out << item_ids[std::size_t(e.i)] << '\t' << item_ids[std::size_t(e.j)] << buf;
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace upg
