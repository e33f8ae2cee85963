#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "slq/errors.hpp"
#include "slq/linalg.hpp"
#include "slq/model.hpp"

// Exact-arithmetic layer: generalized Lyapunov solves, policy evaluation /
// improvement, the algebraic Riccati residual, and model-based policy
// iteration.  Everything here treats the model as known; the sampling-based
// counterparts live in rlpi.hpp.

namespace slq {

// Solves  Acl' P + P Acl + Ccl' P Ccl + Lambda = 0  for symmetric P, where
// (Acl, Ccl) is the closed loop of (sys, k).  The operator is vectorized
// over the lower-triangle coordinates (duplication matrix), giving an
// n^2 x n(n+1)/2 full-column-rank system whenever the operator is
// nonsingular on symmetric matrices; a back-substitution residual check
// guards the near-singular case.
inline SymMatrix solve_lyapunov(const SystemModel& sys, const FeedbackGain& k,
                                const SymMatrix& lambda) {
  if (lambda.dim() != sys.n) {
    throw DimensionMismatch("solve_lyapunov: Lambda must be n x n");
  }
  const auto [acl, ccl] = closed_loop(sys, k);
  const int n = sys.n;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd at = acl.transpose();
  const Eigen::MatrixXd ct = ccl.transpose();
  const Eigen::MatrixXd op =
      (kron(eye, at) + kron(at, eye) + kron(ct, ct)) * duplication(n);
  const Eigen::VectorXd rhs = -vec(lambda.mat());

  Eigen::VectorXd sol;
  try {
    sol = solve_least_squares(op, rhs);
  } catch (const RankDeficient& e) {
    throw SingularOperator(std::string("solve_lyapunov: ") + e.what());
  }
  const SymMatrix p = SymMatrix::from_vec_plus(sol);

  // Inconsistent systems still produce a least-squares "solution"; reject it
  // unless it satisfies the equation to working precision.
  const Eigen::MatrixXd back = at * p.mat() + p.mat() * acl +
                               ct * p.mat() * ccl + lambda.mat();
  const double scale =
      1.0 + lambda.mat().norm() +
      (2.0 * acl.norm() + ccl.norm() * ccl.norm()) * p.mat().norm();
  if (!back.allFinite() || back.norm() > 1e-7 * scale) {
    throw SingularOperator(
        "solve_lyapunov: operator is singular or near-singular (closed loop "
        "not mean-square stable?)");
  }
  return p;
}

// K is a mean-square stabilizer iff the Lyapunov equation with Lambda = I
// has a positive definite solution.
inline bool is_stabilizer(const SystemModel& sys, const FeedbackGain& k) {
  if (k.k.rows() != sys.m || k.k.cols() != sys.n) {
    throw DimensionMismatch("is_stabilizer: gain must be m x n");
  }
  try {
    const SymMatrix p =
        solve_lyapunov(sys, k, SymMatrix(Eigen::MatrixXd::Identity(sys.n, sys.n)));
    return is_positive_definite(p);
  } catch (const SingularOperator&) {
    return false;
  }
}

// One policy-improvement step:  K = -(R + D'PD)^{-1} (B'P + D'PC + S).
inline FeedbackGain improve_policy(const SystemModel& sys, const CostSpec& cost,
                                   const SymMatrix& p) {
  if (p.dim() != sys.n || cost.n() != sys.n || cost.m() != sys.m) {
    throw DimensionMismatch("improve_policy: dimension mismatch");
  }
  const Eigen::MatrixXd g =
      cost.r().mat() + sys.d.transpose() * p.mat() * sys.d;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    throw SingularInnerMatrix(
        "improve_policy: R + D'PD is not positive definite");
  }
  const Eigen::MatrixXd rhs =
      sys.b.transpose() * p.mat() + sys.d.transpose() * p.mat() * sys.c +
      cost.s();
  return FeedbackGain{-llt.solve(rhs)};
}

// Value matrix of a stabilizing gain: the Lyapunov solution with the
// closed-loop cost integrand on the right-hand side.
inline ValueMatrix evaluate_policy_exact(const SystemModel& sys,
                                         const CostSpec& cost,
                                         const FeedbackGain& k) {
  if (!is_stabilizer(sys, k)) {
    throw NotStabilizing("evaluate_policy_exact: gain is not a mean-square stabilizer");
  }
  return ValueMatrix{
      solve_lyapunov(sys, k, SymMatrix(cost.closed_loop_integrand(k)))};
}

// Riccati residual
//   R(P) = A'P + PA + C'PC + Q - (PB + C'PD + S')(R + D'PD)^{-1}(B'P + D'PC + S);
// a fixed point of policy iteration has R(P) = 0.
inline SymMatrix sare_residual(const SystemModel& sys, const CostSpec& cost,
                               const SymMatrix& p) {
  if (p.dim() != sys.n || cost.n() != sys.n || cost.m() != sys.m) {
    throw DimensionMismatch("sare_residual: dimension mismatch");
  }
  const Eigen::MatrixXd g =
      cost.r().mat() + sys.d.transpose() * p.mat() * sys.d;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    throw SingularInnerMatrix("sare_residual: R + D'PD is not positive definite");
  }
  const Eigen::MatrixXd l =
      sys.b.transpose() * p.mat() + sys.d.transpose() * p.mat() * sys.c +
      cost.s();
  const Eigen::MatrixXd res = sys.a.transpose() * p.mat() + p.mat() * sys.a +
                              sys.c.transpose() * p.mat() * sys.c +
                              cost.q().mat() - l.transpose() * llt.solve(l);
  return SymMatrix(res, 1e-6);
}

inline double sare_residual_norm(const SystemModel& sys, const CostSpec& cost,
                                 const SymMatrix& p) {
  return sare_residual(sys, cost, p).mat().norm();
}

// One recorded policy-iteration step: gain K_i, its value matrix P_i, the
// Frobenius step size from P_{i-1} (NaN on the first row), and the Riccati
// residual norm at P_i.
struct PiIterate {
  int iter = 0;
  SymMatrix p;
  FeedbackGain k;
  double delta_p = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
};

struct PiTrace {
  std::vector<PiIterate> iterates;
  bool converged = false;

  // Converged runs end at their last iterate; exhausted runs fall back to
  // the iterate with the smallest residual norm.
  const PiIterate& final() const {
    if (iterates.empty()) throw std::logic_error("PiTrace: empty trace");
    if (converged) return iterates.back();
    std::size_t best = 0;
    for (std::size_t i = 1; i < iterates.size(); ++i) {
      if (iterates[i].residual < iterates[best].residual) best = i;
    }
    return iterates[best];
  }
};

struct PiOptions {
  double eps = 1e-6;
  int max_iter = 100;
};

// Model-based policy iteration: evaluate, improve, repeat until
// ||P_i - P_{i-1}|| < eps.  Throws NotStabilizing if k0 (or, numerically,
// any later gain) fails to stabilize, MaxIterationsExceeded on exhaustion.
inline PiTrace policy_iteration_exact(const SystemModel& sys, const CostSpec& cost,
                                      const FeedbackGain& k0,
                                      const PiOptions& opts = {}) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("policy_iteration_exact: eps must be > 0");
  if (opts.max_iter < 1) throw std::invalid_argument("policy_iteration_exact: max_iter must be >= 1");
  if (!is_stabilizer(sys, k0)) {
    throw NotStabilizing("policy_iteration_exact: initial gain is not a mean-square stabilizer");
  }

  PiTrace trace;
  FeedbackGain k = k0;
  for (int i = 0; i < opts.max_iter; ++i) {
    const SymMatrix p =
        solve_lyapunov(sys, k, SymMatrix(cost.closed_loop_integrand(k)));
    if (!is_positive_definite(p)) {
      throw NotStabilizing("policy_iteration_exact: gain at iteration " +
                           std::to_string(i) + " is not stabilizing");
    }
    PiIterate it;
    it.iter = i;
    it.p = p;
    it.k = k;
    it.residual = sare_residual_norm(sys, cost, p);
    if (i > 0) it.delta_p = (p.mat() - trace.iterates.back().p.mat()).norm();
    trace.iterates.push_back(std::move(it));
    if (i > 0 && trace.iterates.back().delta_p < opts.eps) {
      trace.converged = true;
      return trace;
    }
    k = improve_policy(sys, cost, p);
  }
  throw MaxIterationsExceeded("policy_iteration_exact: no convergence after " +
                              std::to_string(opts.max_iter) + " iterations");
}

struct ValidationReport {
  bool cost_positivity = false;   // R > 0 and Q - S'R^{-1}S > 0
  bool stabilizer_found = false;  // verified constructively; false means "not verified"
  std::optional<FeedbackGain> stabilizer;
  std::vector<std::string> notes;

  bool ok() const { return cost_positivity && stabilizer_found; }
};

namespace detail {

// Cheap stabilizer candidates: the zero gain, and -(D'D)^{-1} D'C when D has
// full column rank (it cancels the state-dependent diffusion).
inline std::vector<FeedbackGain> candidate_gains(const SystemModel& sys) {
  std::vector<FeedbackGain> out;
  out.push_back(FeedbackGain{Eigen::MatrixXd::Zero(sys.m, sys.n)});
  const Eigen::MatrixXd dtd = sys.d.transpose() * sys.d;
  Eigen::LLT<Eigen::MatrixXd> llt(dtd);
  if (llt.info() == Eigen::Success &&
      dtd.norm() > 1e-12 * (1.0 + sys.d.norm())) {
    out.push_back(FeedbackGain{-llt.solve(sys.d.transpose() * sys.c)});
  }
  return out;
}

}  // namespace detail

// Checks the two standing assumptions on raw problem data.  Stabilizability
// is only ever verified constructively (a candidate gain that passes
// is_stabilizer); when every candidate fails the report says "not verified",
// because deciding it exactly is out of scope here.
inline ValidationReport validate(const SystemModel& sys, const Eigen::MatrixXd& q,
                                 const Eigen::MatrixXd& s, const Eigen::MatrixXd& r,
                                 const std::vector<FeedbackGain>& extra_candidates = {}) {
  ValidationReport rep;
  try {
    if (s.rows() != r.rows() || s.cols() != q.rows()) {
      throw DimensionMismatch("S must be m x n");
    }
    std::string why;
    rep.cost_positivity =
        CostSpec::positivity_holds(SymMatrix(q), s, SymMatrix(r), 1e-10, &why);
    if (!rep.cost_positivity) rep.notes.push_back("cost positivity fails: " + why);
  } catch (const std::exception& e) {
    rep.cost_positivity = false;
    rep.notes.push_back(std::string("cost positivity fails: ") + e.what());
  }

  std::vector<FeedbackGain> cands = detail::candidate_gains(sys);
  for (const auto& k : extra_candidates) cands.push_back(k);
  for (const auto& k : cands) {
    if (k.k.rows() != sys.m || k.k.cols() != sys.n) continue;
    if (is_stabilizer(sys, k)) {
      rep.stabilizer_found = true;
      rep.stabilizer = k;
      break;
    }
  }
  if (!rep.stabilizer_found) {
    rep.notes.push_back(
        "mean-square stabilizability not verified: no candidate gain passed "
        "(this does not prove the system is unstabilizable)");
  }
  return rep;
}

inline ValidationReport validate(const SystemModel& sys, const CostSpec& cost,
                                 const std::vector<FeedbackGain>& extra_candidates = {}) {
  return validate(sys, cost.q().mat(), cost.s(), cost.r().mat(), extra_candidates);
}

}  // namespace slq
