#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace upg {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

// Symmetric sparse matrices store both triangles so that mat*vec is a plain
// O(nnz) product.
using SparseMatrix = Eigen::SparseMatrix<double>;

enum class Family { Gaussian, Bernoulli };

inline const char* family_name(Family f) {
  return f == Family::Gaussian ? "gaussian" : "bernoulli";
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace upg
