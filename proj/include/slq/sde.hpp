#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "slq/errors.hpp"
#include "slq/model.hpp"
#include "slq/rng.hpp"

// Euler-Maruyama simulation of the closed loop
//
//   X_{l+1} = X_l + (A+BK) X_l dt + (C+DK) X_l sqrt(dt) xi_l,   xi_l ~ N(0,1),
//
// with one independent stream per path derived from (seed, path index), so
// results are bit-identical regardless of how paths are scheduled.
//
// Two entry points share one stepping kernel:
//   simulate()             -- stores every state (path dumps, small studies);
//   simulate_functionals() -- streams paths, keeping only the per-path cost
//                             integral and terminal state (the two statistics
//                             policy evaluation needs), at a small fraction
//                             of the memory.
// The kernel dispatches the state dimension to fixed-size Eigen types for
// n <= 4; the dynamic fallback is ~5x slower per step, which matters at the
// 1e9..1e10-step workloads the evaluation sweeps run.

namespace slq {

struct SimConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  int n_paths = 10000;
  std::uint64_t seed = 0;

  int steps() const { return static_cast<int>(std::llround(horizon / dt)); }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be > 0");
    if (!(horizon > 0.0) || dt > horizon + 1e-15) {
      throw std::invalid_argument("SimConfig: need 0 < dt <= horizon");
    }
    if (n_paths < 1) throw std::invalid_argument("SimConfig: n_paths must be >= 1");
    if (steps() < 1) throw std::invalid_argument("SimConfig: horizon shorter than one step");
  }
};

// States of every simulated path on the uniform grid t_l = l*dt.  Column
// k*(L+1)+l of `states` holds path k at time t_l.
struct PathBatch {
  Eigen::MatrixXd states;  // n x (L+1)*n_paths, path-major blocks
  Eigen::VectorXd times;   // L+1 grid times
  std::uint64_t seed = 0;
  FeedbackGain gain;
  int n = 0;
  int n_paths = 0;

  int steps() const { return static_cast<int>(times.size()) - 1; }

  Eigen::Block<const Eigen::MatrixXd> path(int k) const {
    return states.block(0, static_cast<Eigen::Index>(k) * (steps() + 1), n, steps() + 1);
  }

  Eigen::VectorXd state(int k, int l) const {
    return states.col(static_cast<Eigen::Index>(k) * (steps() + 1) + l);
  }
};

// Per-path summaries: everything the evaluation identity consumes, plus
// enough to form standard errors test-side.
struct PathFunctionals {
  Eigen::VectorXd cost;      // per-path left-endpoint quadrature of x'Mx
  Eigen::MatrixXd terminal;  // n x n_paths, final states

  int n_paths() const { return static_cast<int>(cost.size()); }

  // Reductions run over paths in index order so they do not depend on how
  // the simulation was scheduled.
  double mean_cost() const {
    double total = 0.0;
    for (Eigen::Index k = 0; k < cost.size(); ++k) total += cost[k];
    return total / static_cast<double>(cost.size());
  }

  Eigen::VectorXd terminal_mean() const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(terminal.rows());
    for (Eigen::Index k = 0; k < terminal.cols(); ++k) acc += terminal.col(k);
    return acc / static_cast<double>(terminal.cols());
  }

  // Sample mean of X(T)' (x) X(T)' as a 1 x n^2 row (the vec of the terminal
  // second-moment matrix, transposed).
  Eigen::RowVectorXd terminal_second_moment() const {
    const Eigen::Index n = terminal.rows();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k < terminal.cols(); ++k) {
      acc.noalias() += terminal.col(k) * terminal.col(k).transpose();
    }
    acc /= static_cast<double>(terminal.cols());
    return Eigen::Map<const Eigen::VectorXd>(acc.data(), acc.size()).transpose();
  }
};

namespace detail {

constexpr double kBlowupNorm = 1e12;

template <class F>
decltype(auto) dim_dispatch(int n, F&& f) {
  switch (n) {
    case 1:
      return f(std::integral_constant<int, 1>{});
    case 2:
      return f(std::integral_constant<int, 2>{});
    case 3:
      return f(std::integral_constant<int, 3>{});
    case 4:
      return f(std::integral_constant<int, 4>{});
    default:
      return f(std::integral_constant<int, Eigen::Dynamic>{});
  }
}

// Steps paths [path_begin, path_end); writes per-path cost and terminal
// state, and (when record != nullptr) every visited state.
template <int N>
void run_paths(const Eigen::MatrixXd& euler_a, const Eigen::MatrixXd& ccl,
               const Eigen::MatrixXd& integrand, const Eigen::VectorXd& x0,
               const SimConfig& cfg, std::uint64_t stream_base, int path_begin,
               int path_end, double* cost_out, double* terminal_out,
               double* record) {
  using Mat = Eigen::Matrix<double, N, N>;
  using Vec = Eigen::Matrix<double, N, 1>;

  const int n = static_cast<int>(x0.size());
  const int L = cfg.steps();
  const double dt = cfg.dt;
  const double sqdt = std::sqrt(dt);
  const Mat ea = euler_a;
  const Mat cc = ccl;
  const Mat mm = integrand;
  const Vec start = x0;
  constexpr double kBlowup2 = kBlowupNorm * kBlowupNorm;

  Vec x = start, ax = start, cx = start;
  for (int k = path_begin; k < path_end; ++k) {
    auto eng = rng::make_stream(cfg.seed, stream_base + static_cast<std::uint64_t>(k));
    x = start;
    double cost = 0.0;
    double* rec = record == nullptr
                      ? nullptr
                      : record + static_cast<std::size_t>(k) * n * (L + 1);
    for (int l = 0; l < L; ++l) {
      if (rec != nullptr) {
        for (int i = 0; i < n; ++i) rec[static_cast<std::size_t>(l) * n + i] = x[i];
      }
      ax.noalias() = mm * x;
      cost += x.dot(ax) * dt;
      const double xi = rng::standard_normal(eng);
      ax.noalias() = ea * x;
      cx.noalias() = cc * x;
      x = ax + (sqdt * xi) * cx;
      if (x.squaredNorm() > kBlowup2) {
        throw NumericalBlowup("simulate: path " + std::to_string(k) +
                              " exceeded norm 1e12 at t = " +
                              std::to_string((l + 1) * dt));
      }
    }
    if (rec != nullptr) {
      for (int i = 0; i < n; ++i) rec[static_cast<std::size_t>(L) * n + i] = x[i];
    }
    cost_out[k] = cost;
    for (int i = 0; i < n; ++i) terminal_out[static_cast<std::size_t>(k) * n + i] = x[i];
  }
}

// Splits the path range across worker threads.  Per-path outputs land in
// preallocated slots, so the result is independent of the split.
inline void for_each_path_range(
    int n_paths, int threads,
    const std::function<void(int, int)>& run_range) {
  int want = threads > 0 ? threads
                         : static_cast<int>(std::thread::hardware_concurrency());
  if (want < 1) want = 1;
  if (want > n_paths) want = n_paths;
  if (want == 1) {
    run_range(0, n_paths);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(want), nullptr);
  const int chunk = (n_paths + want - 1) / want;
  for (int w = 0; w < want; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n_paths, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        run_range(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ClosedLoopOps {
  Eigen::MatrixXd euler_a;    // I + dt (A+BK)
  Eigen::MatrixXd ccl;        // C + DK
  Eigen::MatrixXd integrand;  // Q + K'S + S'K + K'RK
};

inline ClosedLoopOps closed_loop_ops(const SystemModel& sys, const FeedbackGain& k,
                                     const Eigen::MatrixXd& integrand, double dt) {
  auto [acl, ccl] = closed_loop(sys, k);
  return {Eigen::MatrixXd::Identity(sys.n, sys.n) + dt * acl, std::move(ccl),
          integrand};
}

}  // namespace detail

// Streams n_paths Euler-Maruyama paths from x0 and returns the per-path cost
// quadrature (left endpoint, weighted by dt) of x'*integrand*x together with
// the terminal states.  `stream_base` offsets the per-path stream indices so
// batched callers can keep draws disjoint across batches of one run.
inline PathFunctionals simulate_functionals(const SystemModel& sys,
                                            const FeedbackGain& k,
                                            const Eigen::MatrixXd& integrand,
                                            const Eigen::VectorXd& x0,
                                            const SimConfig& cfg,
                                            std::uint64_t stream_base = 0,
                                            int threads = 0) {
  cfg.validate();
  if (x0.size() != sys.n) throw DimensionMismatch("simulate: x0 must have length n");
  if (integrand.rows() != sys.n || integrand.cols() != sys.n) {
    throw DimensionMismatch("simulate: integrand must be n x n");
  }
  const auto ops = detail::closed_loop_ops(sys, k, integrand, cfg.dt);
  PathFunctionals out;
  out.cost.resize(cfg.n_paths);
  out.terminal.resize(sys.n, cfg.n_paths);
  detail::dim_dispatch(sys.n, [&](auto ntag) {
    detail::for_each_path_range(cfg.n_paths, threads, [&](int begin, int end) {
      detail::run_paths<decltype(ntag)::value>(
          ops.euler_a, ops.ccl, ops.integrand, x0, cfg, stream_base, begin, end,
          out.cost.data(), out.terminal.data(), nullptr);
    });
  });
  return out;
}

// Full-trajectory variant of the same kernel (identical draws and states).
// Memory: n * (steps+1) * n_paths doubles.
inline PathBatch simulate(const SystemModel& sys, const FeedbackGain& k,
                          const Eigen::VectorXd& x0, const SimConfig& cfg,
                          std::uint64_t stream_base = 0, int threads = 0) {
  cfg.validate();
  if (x0.size() != sys.n) throw DimensionMismatch("simulate: x0 must have length n");
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(sys.n, sys.n);
  const auto ops = detail::closed_loop_ops(sys, k, zero, cfg.dt);
  const int L = cfg.steps();

  PathBatch batch;
  batch.states.resize(sys.n, static_cast<Eigen::Index>(L + 1) * cfg.n_paths);
  batch.times = Eigen::VectorXd::LinSpaced(L + 1, 0.0, L * cfg.dt);
  batch.seed = cfg.seed;
  batch.gain = k;
  batch.n = sys.n;
  batch.n_paths = cfg.n_paths;

  Eigen::VectorXd cost(cfg.n_paths);
  Eigen::MatrixXd terminal(sys.n, cfg.n_paths);
  detail::dim_dispatch(sys.n, [&](auto ntag) {
    detail::for_each_path_range(cfg.n_paths, threads, [&](int begin, int end) {
      detail::run_paths<decltype(ntag)::value>(
          ops.euler_a, ops.ccl, ops.integrand, x0, cfg, stream_base, begin, end,
          cost.data(), terminal.data(), batch.states.data());
    });
  });
  return batch;
}

// Mean over paths of the left-endpoint running-cost quadrature under the
// batch's own gain.  Recomputed with the same fixed-size kernels and
// accumulation order as simulate_functionals, so the two routes agree
// bit-for-bit on identical inputs.
inline double running_cost(const PathBatch& batch, const CostSpec& cost) {
  const Eigen::MatrixXd integrand = cost.closed_loop_integrand(batch.gain);
  if (integrand.rows() != batch.n) {
    throw DimensionMismatch("running_cost: cost dimension does not match batch");
  }
  const int L = batch.steps();
  const double dt = batch.times.size() > 1 ? batch.times[1] - batch.times[0] : 0.0;
  double total = 0.0;
  detail::dim_dispatch(batch.n, [&](auto ntag) {
    constexpr int N = decltype(ntag)::value;
    using Mat = Eigen::Matrix<double, N, N>;
    using Vec = Eigen::Matrix<double, N, 1>;
    const Mat mm = integrand;
    Vec x = Vec::Zero(integrand.rows());
    Vec ax = x;
    for (int k = 0; k < batch.n_paths; ++k) {
      double acc = 0.0;
      for (int l = 0; l < L; ++l) {
        x = batch.states.col(static_cast<Eigen::Index>(k) * (L + 1) + l);
        ax.noalias() = mm * x;
        acc += x.dot(ax) * dt;
      }
      total += acc;
    }
  });
  return total / static_cast<double>(batch.n_paths);
}

// Sample mean of X(T)' (x) X(T)' over the batch, as a 1 x n^2 row.
inline Eigen::RowVectorXd terminal_second_moment(const PathBatch& batch) {
  const int L = batch.steps();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(batch.n, batch.n);
  for (int k = 0; k < batch.n_paths; ++k) {
    const Eigen::VectorXd x = batch.states.col(static_cast<Eigen::Index>(k) * (L + 1) + L);
    acc.noalias() += x * x.transpose();
  }
  acc /= static_cast<double>(batch.n_paths);
  return Eigen::Map<const Eigen::VectorXd>(acc.data(), acc.size()).transpose();
}

}  // namespace slq
