#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "slq/errors.hpp"

// Dense matrix toolkit for the vectorization calculus used by the policy
// iteration: Kronecker products, column-major vec, the compressed symmetric
// stacking vec+ (off-diagonals doubled), the duplication matrix tying the two
// together, and the solves everything else is built on.

namespace slq {

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return Eigen::kroneckerProduct(a, b);
}

// Column-major stacking of m into a (rows*cols)-vector.
inline Eigen::VectorXd vec(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

// Symmetric n x n matrix stored with exact (bitwise) symmetry.  Construction
// from a general matrix averages the off-diagonal pairs and then mirrors the
// lower triangle, so mat() == mat().transpose() holds exactly, not just to
// round-off.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Eigen::MatrixXd& m, double asym_tol = 1e-8) {
    if (m.rows() != m.cols() || m.rows() < 1) {
      throw std::invalid_argument("SymMatrix: input must be square and non-empty");
    }
    if (!m.allFinite()) {
      throw std::invalid_argument("SymMatrix: input has non-finite entries");
    }
    const double scale = 1.0 + m.cwiseAbs().maxCoeff();
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > asym_tol * scale) {
      throw std::invalid_argument("SymMatrix: input is not symmetric within tolerance");
    }
    m_ = 0.5 * (m + m.transpose());
    for (Eigen::Index j = 0; j < m_.cols(); ++j) {
      for (Eigen::Index i = j + 1; i < m_.rows(); ++i) {
        m_(j, i) = m_(i, j);
      }
    }
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }

  double operator()(int i, int j) const { return m_(i, j); }

  // Lower-triangle column stacking with doubled off-diagonal entries:
  // a 3x3 symmetric P maps to (p11, 2 p21, 2 p31, p22, 2 p32, p33)'.
  Eigen::VectorXd vec_plus() const {
    const int n = dim();
    Eigen::VectorXd v(n * (n + 1) / 2);
    int idx = 0;
    for (int j = 0; j < n; ++j) {
      for (int i = j; i < n; ++i) {
        v[idx++] = (i == j) ? m_(i, j) : 2.0 * m_(i, j);
      }
    }
    return v;
  }

  // Inverse of vec_plus (halves the doubled off-diagonals back).
  static SymMatrix from_vec_plus(const Eigen::VectorXd& v) {
    const double nd = 0.5 * (std::sqrt(8.0 * static_cast<double>(v.size()) + 1.0) - 1.0);
    const int n = static_cast<int>(std::lround(nd));
    if (n < 1 || n * (n + 1) / 2 != v.size()) {
      throw std::invalid_argument("from_vec_plus: length is not a triangular number");
    }
    Eigen::MatrixXd m(n, n);
    int idx = 0;
    for (int j = 0; j < n; ++j) {
      for (int i = j; i < n; ++i) {
        const double x = (i == j) ? v[idx] : 0.5 * v[idx];
        m(i, j) = x;
        m(j, i) = x;
        ++idx;
      }
    }
    return SymMatrix(m);
  }

 private:
  Eigen::MatrixXd m_;
};

inline Eigen::VectorXd vec_plus(const SymMatrix& p) { return p.vec_plus(); }

// Duplication matrix T (n^2 x N, N = n(n+1)/2): T * vec_plus(P) = vec(P) for
// every symmetric P.  Diagonal positions carry 1, each off-diagonal pair
// carries 0.5 (undoing the doubling in vec+).
inline Eigen::MatrixXd duplication(int n) {
  if (n < 1) throw std::invalid_argument("duplication: n must be >= 1");
  const int N = n * (n + 1) / 2;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n * n, N);
  int col = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      if (i == j) {
        t(i * n + i, col) = 1.0;
      } else {
        t(j * n + i, col) = 0.5;
        t(i * n + j, col) = 0.5;
      }
      ++col;
    }
  }
  return t;
}

// True iff the smallest eigenvalue exceeds tol.  Cheap path: Cholesky of the
// shifted matrix; eigenvalue fallback when the factorization is inconclusive
// near the boundary.
inline bool is_positive_definite(const SymMatrix& p, double tol = 1e-10) {
  if (tol < 0) throw std::invalid_argument("is_positive_definite: tol must be >= 0");
  const int n = p.dim();
  const Eigen::MatrixXd shifted =
      p.mat() - tol * Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() == Eigen::Success) {
    // LLT can succeed on tiny indefinite perturbations of singular matrices;
    // accept only when the pivot scale is sane, otherwise fall through.
    return true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.mat(),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > tol;
}

// Least squares via column-pivoted QR.  Throws RankDeficient when a loses
// column rank within Eigen's pivot threshold — upstream that means the
// excitation was insufficient.
inline Eigen::MatrixXd solve_least_squares(const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) {
    throw DimensionMismatch("solve_least_squares: a and b row counts differ");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < a.cols()) {
    throw RankDeficient("solve_least_squares: rank " + std::to_string(qr.rank()) +
                        " < " + std::to_string(a.cols()) + " columns");
  }
  return qr.solve(b);
}

// Condition number estimate (ratio of extreme singular values).
inline double condition_number(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace slq
