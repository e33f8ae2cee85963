#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "slq/errors.hpp"
#include "slq/linalg.hpp"
#include "slq/lyapunov.hpp"
#include "slq/model.hpp"
#include "slq/sde.hpp"

// Model-based baseline: estimate the drift matrix A from one sampled
// closed-loop trajectory by finite differences and least squares, then run
// exact policy iteration on the estimated model.  Serves as the comparison
// point for the data-driven route, which skips the estimation step.

namespace slq {
namespace sysid {

struct EstimationConfig {
  int n_samples = 0;          // read points on [0,1]; 0 means the n^2 default
  Eigen::VectorXd x0;         // trajectory start; must excite the dynamics
  double sim_dt = 1e-3;       // Euler step of the generating simulation
  std::optional<FeedbackGain> gain;  // default: -(D'D)^{-1} D'C
  std::uint64_t seed = 0;
};

namespace detail {

inline FeedbackGain resolve_gain(const SystemModel& sys,
                                 const EstimationConfig& cfg) {
  if (cfg.gain.has_value()) {
    if (cfg.gain->k.rows() != sys.m || cfg.gain->k.cols() != sys.n) {
      throw DimensionMismatch("estimate_drift: supplied gain must be m x n");
    }
    return *cfg.gain;
  }
  const Eigen::MatrixXd dtd = sys.d.transpose() * sys.d;
  Eigen::LLT<Eigen::MatrixXd> llt(dtd);
  if (llt.info() != Eigen::Success ||
      dtd.norm() <= 1e-12 * (1.0 + sys.d.norm())) {
    throw NoValidGain(
        "estimate_drift: D lacks full column rank and no gain was supplied");
  }
  return FeedbackGain{-llt.solve(sys.d.transpose() * sys.c)};
}

}  // namespace detail

// Reads one trajectory under u = Kx at times t_k = k / n_samples on [0,1],
// forms difference quotients y_k = (x_{k+1} - x_k) / (t_{k+1} - t_k), and
// returns  A_hat = Y X' (X X')^{-1} - B K.  The estimation gain does not
// need to be a stabilizer (the horizon is fixed), it only has to keep the
// trajectory finite.  On request, reports the condition number of the Gram
// matrix X X' through `gram_condition`.
inline Eigen::MatrixXd estimate_drift(const SystemModel& sys,
                                      const EstimationConfig& cfg,
                                      double* gram_condition = nullptr) {
  const int n_samples = cfg.n_samples == 0 ? sys.n * sys.n : cfg.n_samples;
  if (n_samples < sys.n) {
    throw std::invalid_argument(
        "estimate_drift: need at least n read points, got " +
        std::to_string(n_samples));
  }
  if (!(cfg.sim_dt > 0.0) || cfg.sim_dt > 1.0 / n_samples + 1e-15) {
    throw std::invalid_argument(
        "estimate_drift: sim_dt must lie in (0, 1/n_samples]");
  }
  if (cfg.x0.size() != sys.n) {
    throw DimensionMismatch("estimate_drift: x0 must have length n");
  }
  const FeedbackGain k = detail::resolve_gain(sys, cfg);

  SimConfig sim_cfg;
  sim_cfg.dt = cfg.sim_dt;
  sim_cfg.horizon = 1.0;
  sim_cfg.n_paths = 1;
  sim_cfg.seed = cfg.seed;
  const PathBatch batch = simulate(sys, k, cfg.x0, sim_cfg);

  Eigen::MatrixXd xmat(sys.n, n_samples);
  Eigen::MatrixXd ymat(sys.n, n_samples);
  const int steps = batch.steps();
  auto read_index = [&](int j) {
    int idx = static_cast<int>(std::llround(static_cast<double>(j) / n_samples / cfg.sim_dt));
    return std::min(idx, steps);
  };
  for (int j = 0; j < n_samples; ++j) {
    const int i0 = read_index(j);
    const int i1 = read_index(j + 1);
    const double span = batch.times[i1] - batch.times[i0];
    xmat.col(j) = batch.state(0, i0);
    ymat.col(j) = (batch.state(0, i1) - batch.state(0, i0)) / span;
  }

  const Eigen::MatrixXd gram = xmat * xmat.transpose();
  const double cond = condition_number(gram);
  if (gram_condition != nullptr) *gram_condition = cond;
  if (!std::isfinite(cond) || cond > 1e10) {
    throw SingularGram(
        "estimate_drift: Gram matrix X X' is singular or near-singular "
        "(trajectory insufficiently exciting)");
  }
  const Eigen::MatrixXd fit =
      gram.ldlt().solve(xmat * ymat.transpose()).transpose();
  return fit - sys.b * k.k;
}

struct PipelineResult {
  Eigen::MatrixXd a_hat;
  double gram_condition = 0.0;
  PiTrace trace;            // residuals re-scored against the true system
  FeedbackGain deployed_gain;  // improvement at the final estimated P
};

// Estimate A, run exact policy iteration on the estimated model, then score
// every iterate's Riccati residual against the TRUE system (the estimated
// model is a means, not the object of interest).  `pi_k0` initializes the
// iteration on the estimated model; the estimation gain usually does not
// stabilize anything, so it is not a candidate.
inline PipelineResult model_based_pipeline(const SystemModel& sys,
                                           const CostSpec& cost,
                                           const EstimationConfig& est_cfg,
                                           const FeedbackGain& pi_k0,
                                           const PiOptions& pi_opts = {}) {
  PipelineResult out;
  out.a_hat = estimate_drift(sys, est_cfg, &out.gram_condition);
  const SystemModel sys_hat(out.a_hat, sys.b, sys.c, sys.d);
  out.trace = policy_iteration_exact(sys_hat, cost, pi_k0, pi_opts);
  for (auto& it : out.trace.iterates) {
    it.residual = sare_residual_norm(sys, cost, it.p);
  }
  out.deployed_gain = improve_policy(sys, cost, out.trace.final().p);
  if (!is_stabilizer(sys, out.deployed_gain)) {
    throw NotStabilizing(
        "model_based_pipeline: the gain derived from the estimated model "
        "does not stabilize the true system");
  }
  return out;
}

}  // namespace sysid
}  // namespace slq
