#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "upg/parallel.hpp"
#include "upg/types.hpp"

namespace upg {

template <class Scalar>
inline Scalar soft_threshold(Scalar x, Scalar rho) {
  if (x > rho) return x - rho;
  if (x < -rho) return x + rho;
  return Scalar(0);
}

// Per-user sufficient statistics for the latent affinity vector. For each
// item the user interacted with, k accumulates the inverse working variances
// (n_uj / V_uj when V is shared across replicates) and u accumulates the
// variance-weighted working residuals sum_r e_uj,r / V_uj.
struct UserCounters {
  std::vector<int> active_items;   // sorted ascending, n_uj > 0
  std::vector<double> k_values;    // >= 0
  std::vector<double> u_values;

  bool empty() const { return active_items.empty(); }
  std::size_t size() const { return active_items.size(); }

  int find(int item) const {
    auto it = std::lower_bound(active_items.begin(), active_items.end(), item);
    if (it == active_items.end() || *it != item) return -1;
    return int(it - active_items.begin());
  }

  void add(int item, double k_inc, double u_inc) {
    auto it = std::lower_bound(active_items.begin(), active_items.end(), item);
    std::size_t pos = std::size_t(it - active_items.begin());
    if (it != active_items.end() && *it == item) {
      k_values[pos] += k_inc;
      u_values[pos] += u_inc;
    } else {
      active_items.insert(it, item);
      k_values.insert(k_values.begin() + long(pos), k_inc);
      u_values.insert(u_values.begin() + long(pos), u_inc);
    }
  }

  // U_u scattered into a dense J-vector.
  Vector rhs(int dim) const {
    Vector out = Vector::Zero(dim);
    for (std::size_t i = 0; i < active_items.size(); ++i)
      out[active_items[i]] = u_values[i];
    return out;
  }
};

struct CgResult {
  Vector x;
  int iterations = 0;
  bool converged = true;
  double relative_residual = 0.0;
};

// Conjugate gradients on (K_u + Omega) x = rhs, where K_u is the diagonal
// completion of the counters. No preconditioning. Cost per iteration is one
// sparse matvec plus O(|active|). max_iter < 0 means 10 * J.
inline CgResult cg_solve(const SparseMatrix& precision, const UserCounters& counters,
                         const Eigen::Ref<const Vector>& rhs, double tol = 1e-8,
                         int max_iter = -1, const Vector* warm_start = nullptr) {
  const int dim = int(precision.rows());
  if (precision.cols() != dim || rhs.size() != dim)
    throw std::invalid_argument("cg_solve: dimension mismatch");
  if (max_iter < 0) max_iter = 10 * dim;

  auto apply = [&](const Vector& v) -> Vector {
    Vector out = precision * v;
    for (std::size_t i = 0; i < counters.active_items.size(); ++i)
      out[counters.active_items[i]] += counters.k_values[i] * v[counters.active_items[i]];
    return out;
  };

  CgResult res;
  double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    res.x = Vector::Zero(dim);
    return res;
  }

  Vector x = (warm_start && warm_start->size() == dim) ? *warm_start : Vector::Zero(dim);
  Vector r = rhs - apply(x);
  Vector p = r;
  double rs = r.squaredNorm();
  int it = 0;
  while (std::sqrt(rs) > tol * bnorm && it < max_iter) {
    Vector ap = apply(p);
    double pap = p.dot(ap);
    if (pap <= 0.0)
      throw std::runtime_error("cg_solve: operator not positive definite (p'Ap <= 0)");
    double alpha = rs / pap;
    x += alpha * p;
    r -= alpha * ap;
    double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
    ++it;
  }
  res.x = std::move(x);
  res.iterations = it;
  res.relative_residual = std::sqrt(rs) / bnorm;
  res.converged = res.relative_residual <= tol;
  return res;
}

namespace detail {

// Inner factor of the rank-m update: C = I + sqrtK * Sigma[act,act] * sqrtK,
// restricted to active items with k > 0.
struct WoodburyFactor {
  std::vector<int> items;
  Vector sqrt_k;
  Eigen::LLT<Matrix> llt;  // of C
};

inline WoodburyFactor woodbury_factor(const Eigen::Ref<const Matrix>& sigma,
                                      const UserCounters& counters) {
  WoodburyFactor f;
  for (std::size_t i = 0; i < counters.active_items.size(); ++i)
    if (counters.k_values[i] > 0.0) f.items.push_back(counters.active_items[i]);
  const int m = int(f.items.size());
  f.sqrt_k.resize(m);
  Matrix c(m, m);
  int ii = 0;
  for (std::size_t i = 0; i < counters.active_items.size(); ++i) {
    if (counters.k_values[i] > 0.0) f.sqrt_k[ii++] = std::sqrt(counters.k_values[i]);
  }
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      c(a, b) = f.sqrt_k[a] * sigma(f.items[std::size_t(a)], f.items[std::size_t(b)]) * f.sqrt_k[b];
  c.diagonal().array() += 1.0;
  f.llt.compute(c);
  if (f.llt.info() != Eigen::Success)
    throw std::runtime_error("woodbury: inner matrix not positive definite");
  return f;
}

}  // namespace detail

// (Omega + K_u)^{-1} from Sigma = Omega^{-1} via the rank-m identity
//   Sigma - Sigma sqrtK (I + sqrtK Sigma sqrtK)^{-1} sqrtK Sigma,
// where m is the number of active items with k > 0.
inline Matrix woodbury_user_cov(const Eigen::Ref<const Matrix>& sigma,
                                const UserCounters& counters) {
  auto f = detail::woodbury_factor(sigma, counters);
  const int m = int(f.items.size());
  if (m == 0) return sigma;
  const int dim = int(sigma.rows());
  Matrix x(dim, m);  // Sigma[:, act] * sqrtK
  for (int a = 0; a < m; ++a) x.col(a) = sigma.col(f.items[std::size_t(a)]) * f.sqrt_k[a];
  return sigma - x * f.llt.solve(x.transpose());
}

// Diagonal of (Omega + K_u)^{-1} restricted to the active items, in the
// order of counters.active_items. Items with k == 0 still get their entry.
inline Vector woodbury_posterior_diag(const Eigen::Ref<const Matrix>& sigma,
                                      const UserCounters& counters) {
  auto f = detail::woodbury_factor(sigma, counters);
  const int m = int(f.items.size());
  Vector out(long(counters.size()));
  if (m == 0) {
    for (std::size_t i = 0; i < counters.size(); ++i)
      out[long(i)] = sigma(counters.active_items[i], counters.active_items[i]);
    return out;
  }
  Matrix x(m, long(counters.size()));
  for (std::size_t i = 0; i < counters.size(); ++i)
    for (int a = 0; a < m; ++a)
      x(a, long(i)) = f.sqrt_k[a] * sigma(f.items[std::size_t(a)], counters.active_items[i]);
  Matrix solved = f.llt.solve(x);
  for (std::size_t i = 0; i < counters.size(); ++i) {
    int j = counters.active_items[i];
    out[long(i)] = sigma(j, j) - x.col(long(i)).dot(solved.col(long(i)));
  }
  return out;
}

// sum_u (Sigma^{-1} + K_u)^{-1} via the aggregated form
//   N_u Sigma - Sigma (sum_u sqrtK (I + sqrtK Sigma sqrtK)^{-1} sqrtK) Sigma.
// The inner sum is accumulated as a J x J matrix over the active supports
// with a fixed chunked reduction (chunks of 256 users, merged in order), so
// the result does not depend on n_threads.
inline Matrix sum_user_cov(const Eigen::Ref<const Matrix>& sigma,
                           const std::vector<UserCounters>& all_counters,
                           int n_threads = 1) {
  const int dim = int(sigma.rows());
  Matrix inner = ordered_chunk_reduce<Matrix>(
      all_counters.size(), 256, n_threads,
      [&] { return Matrix::Zero(dim, dim).eval(); },
      [&](Matrix& acc, std::size_t u) {
        const UserCounters& c = all_counters[u];
        auto f = detail::woodbury_factor(sigma, c);
        const int m = int(f.items.size());
        if (m == 0) return;
        Matrix e = f.llt.solve(Matrix::Identity(m, m));
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < m; ++b)
            acc(f.items[std::size_t(a)], f.items[std::size_t(b)]) +=
                f.sqrt_k[a] * e(a, b) * f.sqrt_k[b];
      },
      [](Matrix& total, const Matrix& part) { total += part; });
  Matrix result = double(all_counters.size()) * sigma;
  result.noalias() -= sigma * inner * sigma;
  return result;
}

// --- symmetric coordinate text exchange ("i j value", 0-based, upper triangle) ---

inline void write_symmetric_coord(std::ostream& os, const SparseMatrix& m) {
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      if (it.row() <= it.col() && it.value() != 0.0) {
        char buf[80];
        std::snprintf(buf, sizeof buf, "%ld %ld %.17g\n", long(it.row()), long(it.col()),
                      it.value());
        os << buf;
      }
}

inline void write_symmetric_coord(std::ostream& os, const Eigen::Ref<const Matrix>& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = i; j < m.cols(); ++j)
      if (m(i, j) != 0.0) {
        char buf[80];
        std::snprintf(buf, sizeof buf, "%d %d %.17g\n", i, j, m(i, j));
        os << buf;
      }
}

// Reads triples and mirrors them into both triangles. dim < 0 infers the
// dimension from the largest index seen.
inline SparseMatrix read_symmetric_coord(std::istream& is, int dim = -1) {
  std::vector<Eigen::Triplet<double>> trips;
  int max_index = -1;
  long i, j;
  double v;
  while (is >> i >> j >> v) {
    if (i > j) std::swap(i, j);
    trips.emplace_back(int(i), int(j), v);
    if (i != j) trips.emplace_back(int(j), int(i), v);
    max_index = std::max(max_index, int(j));
  }
  if (dim < 0) dim = max_index + 1;
  SparseMatrix m(dim, dim);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

// Full symmetric sparse matrix from upper-triangle triplets.
inline SparseMatrix sparse_from_upper(int dim,
                                      const std::vector<Eigen::Triplet<double>>& upper) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * upper.size());
  for (const auto& t : upper) {
    trips.push_back(t);
    if (t.row() != t.col()) trips.emplace_back(t.col(), t.row(), t.value());
  }
  SparseMatrix m(dim, dim);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

inline SparseMatrix sparse_identity(int dim) {
  SparseMatrix m(dim, dim);
  m.setIdentity();
  return m;
}

}  // namespace upg
