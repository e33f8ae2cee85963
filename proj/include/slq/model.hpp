#pragma once

#include <string>
#include <utility>

#include <Eigen/Dense>

#include "slq/errors.hpp"
#include "slq/linalg.hpp"

// Problem data for the stochastic linear-quadratic instance:
//
//   dX = [A X + B u] ds + [C X + D u] dW,      u = K X,
//   J(u) = E \int_0^\infty  X'QX + 2 u'SX + u'Ru  ds.

namespace slq {

struct SystemModel {
  Eigen::MatrixXd a;  // n x n drift
  Eigen::MatrixXd b;  // n x m control-to-drift
  Eigen::MatrixXd c;  // n x n state diffusion
  Eigen::MatrixXd d;  // n x m control diffusion
  int n = 0;
  int m = 0;

  SystemModel(Eigen::MatrixXd a_in, Eigen::MatrixXd b_in, Eigen::MatrixXd c_in,
              Eigen::MatrixXd d_in)
      : a(std::move(a_in)), b(std::move(b_in)), c(std::move(c_in)), d(std::move(d_in)) {
    n = static_cast<int>(a.rows());
    m = static_cast<int>(b.cols());
    if (n < 1 || a.cols() != n) {
      throw DimensionMismatch("SystemModel: A must be square and non-empty");
    }
    if (c.rows() != n || c.cols() != n) {
      throw DimensionMismatch("SystemModel: C must be n x n");
    }
    if (m < 1 || b.rows() != n) {
      throw DimensionMismatch("SystemModel: B must be n x m");
    }
    if (d.rows() != n || d.cols() != m) {
      throw DimensionMismatch("SystemModel: D must be n x m");
    }
    if (!a.allFinite() || !b.allFinite() || !c.allFinite() || !d.allFinite()) {
      throw std::invalid_argument("SystemModel: non-finite coefficient entry");
    }
  }
};

struct FeedbackGain {
  Eigen::MatrixXd k;  // m x n, control law u = k x

  FeedbackGain() = default;
  explicit FeedbackGain(Eigen::MatrixXd k_in) : k(std::move(k_in)) {
    if (k.size() == 0 || !k.allFinite()) {
      throw std::invalid_argument("FeedbackGain: empty or non-finite gain");
    }
  }
};

// Cost weights; construction enforces the positivity standing assumption
// R > 0 and Q - S'R^{-1}S > 0 so an instance of this type is always a
// well-posed objective.
class CostSpec {
 public:
  CostSpec(const Eigen::MatrixXd& q_in, const Eigen::MatrixXd& s_in,
           const Eigen::MatrixXd& r_in, double tol = 1e-10)
      : q_(q_in), s_(s_in), r_(r_in) {
    const int n = q_.dim();
    const int m = r_.dim();
    if (s_.rows() != m || s_.cols() != n) {
      throw DimensionMismatch("CostSpec: S must be m x n");
    }
    if (!s_.allFinite()) {
      throw std::invalid_argument("CostSpec: non-finite S entry");
    }
    std::string why;
    if (!positivity_holds(q_, s_, r_, tol, &why)) {
      throw std::invalid_argument("CostSpec: " + why);
    }
  }

  const SymMatrix& q() const { return q_; }
  const Eigen::MatrixXd& s() const { return s_; }
  const SymMatrix& r() const { return r_; }
  int n() const { return q_.dim(); }
  int m() const { return r_.dim(); }

  // The closed-loop running-cost integrand under u = Kx:
  //   x' (Q + K'S + S'K + K'RK) x  ==  x'Qx + 2(Kx)'Sx + (Kx)'R(Kx).
  Eigen::MatrixXd closed_loop_integrand(const FeedbackGain& k) const {
    const Eigen::MatrixXd& km = k.k;
    return q_.mat() + km.transpose() * s_ + s_.transpose() * km +
           km.transpose() * r_.mat() * km;
  }

  // Checks R > 0 and Q - S'R^{-1}S > 0 without constructing a CostSpec, so
  // invalid weight sets remain representable to validation code.
  static bool positivity_holds(const SymMatrix& q, const Eigen::MatrixXd& s,
                               const SymMatrix& r, double tol = 1e-10,
                               std::string* why = nullptr) {
    if (!is_positive_definite(r, tol)) {
      if (why) *why = "R is not positive definite";
      return false;
    }
    const Eigen::MatrixXd schur =
        q.mat() - s.transpose() * r.mat().llt().solve(s);
    if (!is_positive_definite(SymMatrix(schur), tol)) {
      if (why) *why = "Q - S'R^{-1}S is not positive definite";
      return false;
    }
    return true;
  }

 private:
  SymMatrix q_;
  Eigen::MatrixXd s_;
  SymMatrix r_;
};

struct ValueMatrix {
  SymMatrix p;

  ValueMatrix() = default;
  explicit ValueMatrix(SymMatrix p_in) : p(std::move(p_in)) {}
};

// (A + BK, C + DK).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> closed_loop(
    const SystemModel& sys, const FeedbackGain& k) {
  if (k.k.rows() != sys.m || k.k.cols() != sys.n) {
    throw DimensionMismatch("closed_loop: gain must be m x n");
  }
  return {sys.a + sys.b * k.k, sys.c + sys.d * k.k};
}

}  // namespace slq
