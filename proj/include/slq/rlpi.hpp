#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "slq/errors.hpp"
#include "slq/linalg.hpp"
#include "slq/lyapunov.hpp"
#include "slq/model.hpp"
#include "slq/rng.hpp"
#include "slq/sde.hpp"

// Data-driven policy iteration.  Policy evaluation is recast as a linear
// system over the lower-triangle coordinates of P,
//
//   row_j = x_j' (x) x_j'  -  mean over paths of  X(dt_probe)' (x) X(dt_probe)',
//   rhs_j = mean over paths of the running-cost quadrature on [0, dt_probe],
//   (rows * duplication) vec+(P) = rhs,
//
// where each probe interval is simulated from a known start state.  The
// drift matrix A is never read by the estimator itself -- it enters only
// through the simulated trajectories -- which is the point of the method:
// the improvement step afterwards needs only B, C, D.

namespace slq {
namespace rlpi {

enum class ProbeMode { kRestart, kSequential };

// Where policy evaluation gets its data: a set of probe states, each probed
// for `interval_length` of simulated time.  In restart mode every probe
// starts deterministically from its own state; in sequential mode the probe
// states are read off one reference trajectory (consecutive intervals of a
// single run, as one would do against a plant that cannot be reset).
struct ExcitationPlan {
  std::vector<Eigen::VectorXd> initial_states;
  double interval_length = 1.0;
  ProbeMode mode = ProbeMode::kRestart;

  int size() const { return static_cast<int>(initial_states.size()); }

  void validate(int n) const {
    const int want = n * (n + 1) / 2;
    if (size() < want) {
      throw std::invalid_argument(
          "ExcitationPlan: need at least n(n+1)/2 = " + std::to_string(want) +
          " probe states, got " + std::to_string(size()));
    }
    if (!(interval_length > 0.0)) {
      throw std::invalid_argument("ExcitationPlan: interval_length must be > 0");
    }
    for (const auto& x : initial_states) {
      if (x.size() != n) throw std::invalid_argument("ExcitationPlan: probe state has wrong dimension");
      if (!x.allFinite()) throw std::invalid_argument("ExcitationPlan: probe state not finite");
      if (x.norm() == 0.0) throw std::invalid_argument("ExcitationPlan: zero probe state excites nothing");
    }
  }
};

// Default probes: unit directions e_a and pair sums e_a + e_b (a < b), each
// scaled to norm 2, listed twice.  The n(n+1)/2 distinct states span the
// symmetric coordinates exactly; the second copy (independent draws) halves
// the variance of the overdetermined solve.
inline ExcitationPlan default_plan(int n, double interval_length = 1.0,
                                   ProbeMode mode = ProbeMode::kRestart) {
  if (n < 1) throw std::invalid_argument("default_plan: n must be >= 1");
  std::vector<Eigen::VectorXd> states;
  for (int a = 0; a < n; ++a) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[a] = 2.0;
    states.push_back(e);
  }
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[a] = std::sqrt(2.0);
      e[b] = std::sqrt(2.0);
      states.push_back(e);
    }
  }
  const std::size_t base = states.size();
  for (std::size_t j = 0; j < base; ++j) states.push_back(states[j]);
  ExcitationPlan plan;
  plan.initial_states = std::move(states);
  plan.interval_length = interval_length;
  plan.mode = mode;
  return plan;
}

struct EvaluationSystem {
  Eigen::MatrixXd xmat;  // M x n^2, rows as documented above
  Eigen::VectorXd jvec;  // M, per-probe mean running costs
  double condition = std::numeric_limits<double>::quiet_NaN();  // of xmat * duplication
};

// Injection point for the probe simulations, so tests can route them through
// a stand-in (e.g. to prove the estimator never reads sys.a directly).
using Simulator = std::function<PathFunctionals(
    const SystemModel&, const FeedbackGain&, const Eigen::MatrixXd& integrand,
    const Eigen::VectorXd& x0, const SimConfig&, std::uint64_t stream_base)>;

inline PathFunctionals default_simulator(const SystemModel& sys,
                                         const FeedbackGain& k,
                                         const Eigen::MatrixXd& integrand,
                                         const Eigen::VectorXd& x0,
                                         const SimConfig& cfg,
                                         std::uint64_t stream_base) {
  return simulate_functionals(sys, k, integrand, x0, cfg, stream_base);
}

namespace detail {

// Stream-index layout within one evaluation: probe j owns path indices
// [j*K, (j+1)*K); the sequential-mode reference legs sit above every probe
// at M*K, M*K+1, ...; plan-enlargement draws live near 2^63.  No overlap.
inline std::uint64_t probe_stream_base(int probe, int n_paths) {
  return static_cast<std::uint64_t>(probe) * static_cast<std::uint64_t>(n_paths);
}

inline Eigen::RowVectorXd kron_row(const Eigen::VectorXd& x) {
  return kron(x, x).transpose();
}

// Resolves the probe start states: the plan's own states (restart), or
// states read off a single reference trajectory at multiples of the probe
// interval (sequential).  Each reference leg continues from the previous
// leg's endpoint with a fresh stream, which by the Markov property is one
// trajectory draw of length M * interval_length.
inline std::vector<Eigen::VectorXd> probe_states(
    const SystemModel& sys, const FeedbackGain& k, const ExcitationPlan& plan,
    const SimConfig& cfg, const Simulator& sim) {
  if (plan.mode == ProbeMode::kRestart) return plan.initial_states;

  const int m_probes = plan.size();
  std::vector<Eigen::VectorXd> states;
  states.reserve(m_probes);
  states.push_back(plan.initial_states.front());
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(sys.n, sys.n);
  SimConfig ref = cfg;
  ref.n_paths = 1;
  ref.horizon = plan.interval_length;
  const std::uint64_t ref_base = probe_stream_base(m_probes, cfg.n_paths);
  for (int j = 1; j < m_probes; ++j) {
    const PathFunctionals leg = sim(sys, k, zero, states.back(), ref,
                                    ref_base + static_cast<std::uint64_t>(j - 1));
    states.push_back(leg.terminal.col(0));
  }
  return states;
}

inline ExcitationPlan enlarged(const ExcitationPlan& plan, int n, int extra,
                               std::uint64_t seed, int retry) {
  ExcitationPlan out = plan;
  auto eng = rng::make_stream(seed, 0x8000000000000000ull +
                                        static_cast<std::uint64_t>(retry));
  for (int e = 0; e < extra; ++e) {
    Eigen::VectorXd x(n);
    do {
      for (int i = 0; i < n; ++i) x[i] = rng::standard_normal(eng);
    } while (x.norm() < 1e-6);
    out.initial_states.push_back(2.0 * x / x.norm());
  }
  return out;
}

}  // namespace detail

// Simulates the plan's probes under gain k and assembles the evaluation
// system.  The drift matrix participates only through `sim` -- deliberately:
// k being a stabilizer is the caller's precondition and is NOT re-checked
// here, because doing so would read sys.a directly and break the
// partially-model-free contract.  A non-stabilizing gain surfaces as
// NumericalBlowup from the probe simulations instead.
inline EvaluationSystem build_evaluation_system(const SystemModel& sys,
                                                const CostSpec& cost,
                                                const FeedbackGain& k,
                                                const ExcitationPlan& plan,
                                                const SimConfig& cfg,
                                                const Simulator& sim = default_simulator) {
  plan.validate(sys.n);
  cfg.validate();
  const Eigen::MatrixXd integrand = cost.closed_loop_integrand(k);
  const std::vector<Eigen::VectorXd> starts =
      detail::probe_states(sys, k, plan, cfg, sim);
  const int m_probes = static_cast<int>(starts.size());

  SimConfig probe_cfg = cfg;
  probe_cfg.horizon = plan.interval_length;

  EvaluationSystem es;
  es.xmat.resize(m_probes, sys.n * sys.n);
  es.jvec.resize(m_probes);
  for (int j = 0; j < m_probes; ++j) {
    const PathFunctionals f =
        sim(sys, k, integrand, starts[j], probe_cfg,
            detail::probe_stream_base(j, cfg.n_paths));
    es.xmat.row(j) = detail::kron_row(starts[j]) - f.terminal_second_moment();
    es.jvec[j] = f.mean_cost();
  }
  es.condition = condition_number(es.xmat * duplication(sys.n));
  return es;
}

// Least-squares solve of (xmat * duplication) vec+(P) = jvec.  Throws
// RankDeficient when the probes do not excite all symmetric coordinates;
// callers should enlarge the plan and retry.
inline ValueMatrix solve_evaluation(const EvaluationSystem& es, int n) {
  if (es.xmat.cols() != n * n) {
    throw DimensionMismatch("solve_evaluation: xmat column count != n^2");
  }
  if (es.xmat.rows() != es.jvec.size()) {
    throw DimensionMismatch("solve_evaluation: xmat/jvec row mismatch");
  }
  const Eigen::VectorXd sol =
      solve_least_squares(es.xmat * duplication(n), es.jvec);
  return ValueMatrix{SymMatrix::from_vec_plus(sol)};
}

struct RlOptions {
  double eps = 1e-3;   // coarser than the exact loop; evaluation noise floors ||dP||
  int max_iter = 25;
  int enlarge_retries = 3;  // RankDeficient recovery (restart mode only)
  int threads = 0;          // forwarded to the default simulator only
};

// Algorithm: simulate-evaluate-improve from k0 until ||P_i - P_{i-1}|| < eps.
// Each iteration derives a fresh seed from (cfg.seed, iteration), so
// successive evaluations use independent draws; the whole trace is
// reproducible from cfg.seed alone.  On exhaustion the trace comes back
// converged = false and final() picks the smallest-residual iterate --
// stochastic evaluation can oscillate at its noise floor, which is not a
// hard failure.
inline PiTrace run(const SystemModel& sys, const CostSpec& cost,
                   const FeedbackGain& k0, const ExcitationPlan& plan,
                   const SimConfig& cfg, const RlOptions& opts = {},
                   const Simulator& sim = {}) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("rlpi::run: eps must be > 0");
  if (opts.max_iter < 1) throw std::invalid_argument("rlpi::run: max_iter must be >= 1");
  plan.validate(sys.n);
  if (!is_stabilizer(sys, k0)) {
    throw NotStabilizing("rlpi::run: initial gain is not a mean-square stabilizer");
  }
  const Simulator simulator =
      sim ? sim
          : Simulator([threads = opts.threads](
                          const SystemModel& s, const FeedbackGain& g,
                          const Eigen::MatrixXd& integrand,
                          const Eigen::VectorXd& x0, const SimConfig& c,
                          std::uint64_t base) {
              return simulate_functionals(s, g, integrand, x0, c, base, threads);
            });

  PiTrace trace;
  FeedbackGain k = k0;
  ExcitationPlan live_plan = plan;
  for (int i = 0; i < opts.max_iter; ++i) {
    SimConfig iter_cfg = cfg;
    iter_cfg.seed = rng::stream_seed(cfg.seed, static_cast<std::uint64_t>(i));

    SymMatrix p;
    for (int attempt = 0;; ++attempt) {
      const EvaluationSystem es =
          build_evaluation_system(sys, cost, k, live_plan, iter_cfg, simulator);
      try {
        p = solve_evaluation(es, sys.n).p;
        break;
      } catch (const RankDeficient&) {
        if (live_plan.mode != ProbeMode::kRestart ||
            attempt >= opts.enlarge_retries) {
          throw;
        }
        live_plan = detail::enlarged(live_plan, sys.n, sys.n * (sys.n + 1) / 2,
                                     cfg.seed, attempt);
      }
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
  return trace;  // converged = false; final() = best residual seen
}

}  // namespace rlpi
}  // namespace slq
