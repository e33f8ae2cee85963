// End-to-end acceptance checks for the whole library, one test per release
// criterion.  Each test prints a single pass/fail line through the harness;
// tolerances and budgets are fixed here on purpose — do not tune them to the
// implementation.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slq/slq.hpp"
#include "test_instances.hpp"

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

class WallClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double rel_err(const MatrixXd& got, const MatrixXd& want) {
  return (got - want).norm() / want.norm();
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SLQ_CLI_PATH + "\" " + args + " 2>&1";
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return res;
  char buf[512];
  while (fgets(buf, sizeof buf, pipe) != nullptr) res.output += buf;
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

slq::PiTrace exact_reference_trace() {
  slq::PiOptions opts;
  opts.eps = 1e-8;
  opts.max_iter = 30;
  return slq::policy_iteration_exact(bench::sys2d(), bench::cost2d(),
                                     bench::k0_2d(), opts);
}

}  // namespace

// 1. Exact policy iteration reproduces the benchmark value matrix.
TEST(Acceptance, ExactPolicyIterationRecoversReferenceValue) {
  const WallClock clock;
  const slq::PiTrace trace = exact_reference_trace();
  ASSERT_TRUE(trace.converged);
  EXPECT_LE(trace.iterates.size(), 30u);

  const MatrixXd p = trace.final().p.mat();
  EXPECT_LT((p - bench::p_star()).cwiseAbs().maxCoeff(), 5e-3);
  EXPECT_LE(slq::sare_residual_norm(bench::sys2d(), bench::cost2d(),
                                    trace.final().p),
            1e-8);
  EXPECT_LT(clock.seconds(), 1.0);
}

// 2. Policy improvement at the converged value reproduces the optimal gain.
TEST(Acceptance, ImprovedGainMatchesReferenceOptimalGain) {
  const slq::PiTrace trace = exact_reference_trace();
  const slq::FeedbackGain k =
      slq::improve_policy(bench::sys2d(), bench::cost2d(), trace.final().p);
  EXPECT_LT((k.k - bench::k_star()).cwiseAbs().maxCoeff(), 5e-3);
}

// 3. The verify command reports the residual of the four-decimal benchmark
// value matrix; the rounding of its entries dominates, at 1.0175e-4.
TEST(Acceptance, VerifyReportsResidualOfReferenceValue) {
  const fs::path cfg = fs::path(SLQ_CONFIG_DIR) / "slq2d.json";
  const auto res = run_cli(
      "verify \"" + cfg.string() +
      "\" --p \"[[61.1422,-35.7578],[-35.7578,81.6610]]\" --tol 1e-3");
  EXPECT_EQ(res.exit_code, 0) << res.output;

  const std::string tag = "||R(P)||_F = ";
  const auto pos = res.output.find(tag);
  ASSERT_NE(pos, std::string::npos) << res.output;
  const double norm = std::strtod(res.output.c_str() + pos + tag.size(), nullptr);
  EXPECT_NEAR(norm, 1.0175e-4, 2e-6);
}

// 4. The data-driven loop statistically reproduces the value matrix at the
// pinned budget (dt = 1e-3, 2e4 paths per probe, 2N probes, fixed seed).
//
// KNOWN RED, left failing by design: the final-residual clause demands
// ||R(P)|| <= 5e-3, but at this path budget the evaluation noise floors the
// residual near 0.2-0.7 (scaling ~ 1/sqrt(K_paths): meeting 5e-3 needs
// ~10^8-10^9 paths per probe, far beyond the stated 60 s budget).  The
// convergence and relative-error clauses pass; the assertion stays at the
// stated bar rather than being widened to fit.
TEST(Acceptance, DataDrivenLoopReproducesValueStatistically) {
  const WallClock clock;
  const auto sys = bench::sys2d();
  const auto cost = bench::cost2d();

  slq::SimConfig cfg;
  cfg.dt = 1e-3;
  cfg.n_paths = 20000;
  cfg.seed = 20240817;
  const auto plan = slq::rlpi::default_plan(2);  // M = 2N = 6

  slq::rlpi::RlOptions opts;
  opts.eps = 1.0;  // ~3x the measured ||dP|| noise floor at this budget
  opts.max_iter = 25;
  const slq::PiTrace trace =
      slq::rlpi::run(sys, cost, bench::k0_2d(), plan, cfg, opts);

  EXPECT_TRUE(trace.converged);
  EXPECT_LE(trace.iterates.size(), 25u);
  const auto& fin = trace.final();
  EXPECT_LE(rel_err(fin.p.mat(), bench::p_star()), 0.05);
  EXPECT_LE(fin.residual, 5e-3);  // expected red; see the note above
  EXPECT_LT(clock.seconds(), 60.0);
}

// 5. Scalar closed form sqrt(2) - 1 through both pipelines.
TEST(Acceptance, ScalarClosedFormBothPipelines) {
  const WallClock clock;
  const auto sys = bench::sys_scalar();
  const auto cost = bench::cost_scalar();
  const slq::FeedbackGain k0(MatrixXd::Zero(1, 1));

  slq::PiOptions exact_opts;
  exact_opts.eps = 1e-12;
  const slq::PiTrace exact = slq::policy_iteration_exact(sys, cost, k0, exact_opts);
  EXPECT_TRUE(exact.converged);
  EXPECT_NEAR(exact.final().p(0, 0), bench::p_scalar_star(), 1e-10);

  slq::SimConfig cfg;
  cfg.dt = 1e-3;
  cfg.n_paths = 1;  // no diffusion: deterministic
  cfg.seed = 1;
  slq::rlpi::RlOptions rl_opts;
  rl_opts.eps = 1e-9;
  const slq::PiTrace rl =
      slq::rlpi::run(sys, cost, k0, slq::rlpi::default_plan(1), cfg, rl_opts);
  EXPECT_TRUE(rl.converged);
  EXPECT_NEAR(rl.final().p(0, 0), bench::p_scalar_star(), 1e-3);
  EXPECT_LT(clock.seconds(), 5.0);
}

// 6. Convergence-theorem properties on 50 randomly generated mean-square
// stabilizable instances: stabilizer chain, monotone values, vanishing
// residual.
TEST(Acceptance, RandomInstancePropertySuite) {
  const WallClock clock;
  auto eng = slq::rng::make_stream(0xACCE97, 0);
  auto randn_mat = [&](int r, int c, double scale) {
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = scale * slq::rng::standard_normal(eng);
    }
    return m;
  };

  int accepted = 0;
  int attempts = 0;
  while (accepted < 50 && attempts < 500) {
    ++attempts;
    const int n = 1 + static_cast<int>(std::floor(4.0 * eng.uniform01()));
    const int m = 1 + static_cast<int>(std::floor(2.0 * eng.uniform01()));

    // Draw a stable closed loop directly, then back-solve the open loop.
    const MatrixXd b = randn_mat(n, m, 1.0);
    const MatrixXd d = randn_mat(n, m, 0.2);
    const MatrixXd kbar = randn_mat(m, n, 0.5);
    MatrixXd g = randn_mat(n, n, 1.0);
    const Eigen::EigenSolver<MatrixXd> ges(g);
    const double shift =
        ges.eigenvalues().real().maxCoeff() + 0.5 + eng.uniform01();
    const MatrixXd acl = g - shift * MatrixXd::Identity(n, n);
    const MatrixXd ccl = randn_mat(n, n, 0.15);

    // Mean-square stability of (acl, ccl): the second-moment generator must
    // be Hurwitz, with margin so the accept/reject boundary cannot flicker.
    const MatrixXd eye = MatrixXd::Identity(n, n);
    const MatrixXd gen = slq::kron(eye, acl) + slq::kron(acl, eye) +
                         slq::kron(ccl, ccl);
    const Eigen::EigenSolver<MatrixXd> ms(gen);
    if (ms.eigenvalues().real().maxCoeff() > -1e-3) continue;

    const MatrixXd a = acl - b * kbar;
    const MatrixXd c = ccl - d * kbar;
    const slq::SystemModel sys(a, b, c, d);
    const slq::FeedbackGain k0{kbar};
    if (!slq::is_stabilizer(sys, k0)) continue;

    const MatrixXd mq = randn_mat(n, n, 1.0);
    const MatrixXd mr = randn_mat(m, m, 1.0);
    const MatrixXd q = mq.transpose() * mq / n + 0.5 * MatrixXd::Identity(n, n);
    const MatrixXd r = mr.transpose() * mr / m + 0.5 * MatrixXd::Identity(m, m);
    MatrixXd s = randn_mat(m, n, 0.05);
    if (!slq::CostSpec::positivity_holds(slq::SymMatrix(q), s, slq::SymMatrix(r))) {
      s.setZero();
    }
    const slq::CostSpec cost(q, s, r);

    slq::PiOptions opts;
    opts.eps = 1e-9;
    opts.max_iter = 50;
    slq::PiTrace trace;
    try {
      trace = slq::policy_iteration_exact(sys, cost, k0, opts);
    } catch (const slq::Error& e) {
      ADD_FAILURE() << "instance " << accepted << " (n=" << n << ", m=" << m
                    << "): " << e.what();
      continue;
    }
    ++accepted;

    for (const auto& it : trace.iterates) {
      EXPECT_TRUE(slq::is_stabilizer(sys, it.k))
          << "instance " << accepted << " iteration " << it.iter;
    }
    for (std::size_t i = 1; i < trace.iterates.size(); ++i) {
      const MatrixXd diff =
          trace.iterates[i - 1].p.mat() - trace.iterates[i].p.mat();
      const Eigen::SelfAdjointEigenSolver<MatrixXd> es(diff);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8)
          << "instance " << accepted << " step " << i;
    }
    EXPECT_LE(trace.final().residual, 1e-6) << "instance " << accepted;
  }
  EXPECT_EQ(accepted, 50) << "generator exhausted after " << attempts
                          << " attempts";
  EXPECT_LT(clock.seconds(), 30.0);
}

// 7. Trajectory-based policy evaluation agrees with the exact Lyapunov
// evaluation across random stabilizers, and sharpens when the step halves
// and the path budget quadruples.
TEST(Acceptance, TrajectoryEvaluationMatchesExactOracle) {
  const WallClock clock;
  const auto sys = bench::sys2d();
  const auto cost = bench::cost2d();

  auto eng = slq::rng::make_stream(0xACCE98, 0);
  std::vector<slq::FeedbackGain> gains;
  while (gains.size() < 10) {
    MatrixXd k = bench::k_star();
    for (int j = 0; j < 2; ++j) k(0, j) += 0.3 * slq::rng::standard_normal(eng);
    const slq::FeedbackGain cand(k);
    if (slq::is_stabilizer(sys, cand)) gains.push_back(cand);
  }

  const auto plan = slq::rlpi::default_plan(2, 0.5);
  std::vector<double> base_err, refined_err;
  for (std::size_t j = 0; j < gains.size(); ++j) {
    const MatrixXd exact =
        slq::evaluate_policy_exact(sys, cost, gains[j]).p.mat();

    slq::SimConfig base;
    base.dt = 1e-3;
    base.n_paths = 20000;
    base.seed = 9000 + j;
    const auto es_base =
        slq::rlpi::build_evaluation_system(sys, cost, gains[j], plan, base);
    base_err.push_back(
        rel_err(slq::rlpi::solve_evaluation(es_base, 2).p.mat(), exact));

    slq::SimConfig fine;
    fine.dt = 5e-4;
    fine.n_paths = 80000;
    fine.seed = 9500 + j;
    const auto es_fine =
        slq::rlpi::build_evaluation_system(sys, cost, gains[j], plan, fine);
    refined_err.push_back(
        rel_err(slq::rlpi::solve_evaluation(es_fine, 2).p.mat(), exact));
  }

  EXPECT_LE(median(base_err), 0.05);

  // Halving the step and quadrupling the paths halves both error components
  // (discretization bias and sampling noise), so the expected error ratio is
  // one half.  Per-gain errors are far too noisy to compare individually
  // (ten samples of a heavy-tailed magnitude); pool the squared errors over
  // the gains so the sampling spread of the ratio stays well under the bar.
  double base_sq = 0.0, refined_sq = 0.0;
  for (std::size_t j = 0; j < gains.size(); ++j) {
    base_sq += base_err[j] * base_err[j];
    refined_sq += refined_err[j] * refined_err[j];
  }
  EXPECT_LE(std::sqrt(refined_sq / base_sq), 0.75);
  EXPECT_LT(clock.seconds(), 120.0);
}

// 8. Bellman identity at the converged pair: simulated one-interval cost
// plus the terminal quadratic form matches x0' P x0 within Monte Carlo
// error.
TEST(Acceptance, BellmanIdentityMonteCarlo) {
  const WallClock clock;
  const auto sys = bench::sys2d();
  const auto cost = bench::cost2d();
  const slq::PiTrace trace = exact_reference_trace();
  const slq::SymMatrix& p = trace.final().p;
  const slq::FeedbackGain k = slq::improve_policy(sys, cost, p);
  const VectorXd x0 = bench::x0_2d();

  slq::SimConfig cfg;
  cfg.dt = 2.5e-4;  // weak Euler bias must sit well under the sampling error
  cfg.horizon = 1.0;
  cfg.n_paths = 10000;
  cfg.seed = 88;
  const auto fn = slq::simulate_functionals(
      sys, k, cost.closed_loop_integrand(k), x0, cfg);

  std::vector<double> per_path(cfg.n_paths);
  for (int j = 0; j < cfg.n_paths; ++j) {
    const VectorXd xt = fn.terminal.col(j);
    per_path[j] = fn.cost(j) + xt.dot(p.mat() * xt);
  }
  double mean = 0.0;
  for (double v : per_path) mean += v;
  mean /= cfg.n_paths;
  double var = 0.0;
  for (double v : per_path) var += (v - mean) * (v - mean);
  var /= cfg.n_paths - 1;
  const double se = std::sqrt(var / cfg.n_paths);

  const double lhs = x0.dot(p.mat() * x0);
  EXPECT_NEAR(lhs, 550.4248, 0.1);  // benchmark value of x0' P* x0
  EXPECT_NEAR(mean, lhs, 3.0 * se);
  EXPECT_LT(clock.seconds(), 30.0);
}

// 9. At matched sampling budgets the model-free route lands an order of
// magnitude closer to the Riccati fixed point than the estimate-then-solve
// baseline (median final residual over ten seeds).
TEST(Acceptance, ModelFreeBeatsIdentificationBaseline) {
  const WallClock clock;
  const auto sys = bench::sys2d();
  const auto cost = bench::cost2d();
  const auto plan = slq::rlpi::default_plan(2);

  std::vector<double> rl_res, sysid_res;
  for (std::uint64_t seed = 101; seed <= 110; ++seed) {
    slq::SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_paths = 5000;
    cfg.seed = seed;
    slq::rlpi::RlOptions opts;
    opts.eps = 1.0;
    opts.max_iter = 8;
    const slq::PiTrace trace =
        slq::rlpi::run(sys, cost, bench::k0_2d(), plan, cfg, opts);
    rl_res.push_back(trace.final().residual);

    slq::sysid::EstimationConfig est;
    est.n_samples = 1000;  // the same observation grid: dt steps on [0, 1]
    est.sim_dt = 1e-3;
    est.x0 = bench::x0_2d();
    est.seed = seed;
    slq::PiOptions pi_opts;
    pi_opts.eps = 1e-8;
    try {
      const auto out =
          slq::sysid::model_based_pipeline(sys, cost, est, bench::k0_2d(), pi_opts);
      sysid_res.push_back(out.trace.final().residual);
    } catch (const slq::Error&) {
      sysid_res.push_back(std::numeric_limits<double>::infinity());
    }
  }

  const double m_rl = median(rl_res);
  const double m_sysid = median(sysid_res);
  EXPECT_LT(m_rl, 2.0);
  EXPECT_GE(m_sysid, 10.0 * m_rl)
      << "model-free median " << m_rl << ", baseline median " << m_sysid;
  EXPECT_LT(clock.seconds(), 120.0);
}

// 10. Seeded runs leave byte-identical traces.
TEST(Acceptance, SeededRunsAreByteIdentical) {
  const fs::path cfg = fs::path(SLQ_CONFIG_DIR) / "scalar.json";
  const fs::path d1 = fs::temp_directory_path() / "slq_accept_det_a";
  const fs::path d2 = fs::temp_directory_path() / "slq_accept_det_b";
  fs::remove_all(d1);
  fs::remove_all(d2);

  const auto r1 =
      run_cli("run \"" + cfg.string() + "\" --out \"" + d1.string() + "\"");
  const auto r2 =
      run_cli("run \"" + cfg.string() + "\" --out \"" + d2.string() + "\"");
  ASSERT_EQ(r1.exit_code, 0) << r1.output;
  ASSERT_EQ(r2.exit_code, 0) << r2.output;

  const std::string t1 = slurp(d1 / "trace.csv");
  ASSERT_FALSE(t1.empty());
  EXPECT_EQ(t1, slurp(d2 / "trace.csv"));

  // Same property through the exact pipeline on the 2-D benchmark.
  const fs::path cfg2 = fs::path(SLQ_CONFIG_DIR) / "slq2d.json";
  const fs::path d3 = fs::temp_directory_path() / "slq_accept_det_c";
  const fs::path d4 = fs::temp_directory_path() / "slq_accept_det_d";
  fs::remove_all(d3);
  fs::remove_all(d4);
  const auto r3 = run_cli("run \"" + cfg2.string() + "\" --pipeline exact --out \"" +
                          d3.string() + "\"");
  const auto r4 = run_cli("run \"" + cfg2.string() + "\" --pipeline exact --out \"" +
                          d4.string() + "\"");
  ASSERT_EQ(r3.exit_code, 0) << r3.output;
  ASSERT_EQ(r4.exit_code, 0) << r4.output;
  EXPECT_EQ(slurp(d3 / "trace.csv"), slurp(d4 / "trace.csv"));
}
