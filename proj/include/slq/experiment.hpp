#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "slq/errors.hpp"
#include "slq/linalg.hpp"
#include "slq/lyapunov.hpp"
#include "slq/model.hpp"
#include "slq/rlpi.hpp"
#include "slq/sde.hpp"
#include "slq/sysid.hpp"

// Experiment harness behind the CLI: load a problem instance from a JSON
// config, run the selected pipeline(s), and write the convergence artifacts
// (trace.csv, summary.json, optional paths.csv).  Kept header-only and
// CLI-free so tests can drive it in-process.

namespace slq {
namespace experiment {

enum class Pipeline { kExact, kRl, kSysid, kAll };

struct ExperimentConfig {
  SystemModel sys;
  CostSpec cost;
  Eigen::VectorXd x0;
  FeedbackGain k0;
  SimConfig sim;
  rlpi::ExcitationPlan plan;
  PiOptions exact_opts;
  rlpi::RlOptions rl_opts;
  sysid::EstimationConfig est;
  Pipeline pipeline = Pipeline::kExact;
  int dump_paths = 0;  // paths.csv path count; 0 disables
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& msg) {
  throw ConfigError("config: " + msg);
}

inline std::string joined(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const json& require(const json& j, const std::string& key,
                           const std::string& path) {
  if (!j.is_object()) fail("expected an object at '" + (path.empty() ? std::string("<top level>") : path) + "'");
  const auto it = j.find(key);
  if (it == j.end()) fail("missing field '" + joined(path, key) + "'");
  return *it;
}

inline double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) fail("field '" + path + "' must be a number");
  return j.get<double>();
}

inline Eigen::MatrixXd parse_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail("field '" + path + "' must be a non-empty array of row arrays");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j.front().is_array() || j.front().empty()) {
    fail("field '" + path + "' must be a non-empty array of row arrays");
  }
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      fail("field '" + path + "' has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = number_at(row[static_cast<std::size_t>(c)],
                          path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    }
  }
  return m;
}

inline Eigen::VectorXd parse_vector(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail("field '" + path + "' must be a non-empty array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = number_at(j[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]");
  }
  return v;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Pipeline parse_pipeline(const std::string& s) {
  if (s == "exact") return Pipeline::kExact;
  if (s == "rl") return Pipeline::kRl;
  if (s == "sysid") return Pipeline::kSysid;
  if (s == "all") return Pipeline::kAll;
  fail("field 'pipeline' must be one of exact|rl|sysid|all, got '" + s + "'");
}

inline void read_solver_block(const json& j, const std::string& path,
                              double* eps, int* max_iter) {
  if (auto it = j.find("eps"); it != j.end()) {
    *eps = number_at(*it, joined(path, "eps"));
    if (!(*eps > 0.0)) fail("field '" + joined(path, "eps") + "' must be > 0");
  }
  if (auto it = j.find("max_iter"); it != j.end()) {
    if (!it->is_number_integer()) fail("field '" + joined(path, "max_iter") + "' must be an integer");
    *max_iter = it->get<int>();
    if (*max_iter < 1) fail("field '" + joined(path, "max_iter") + "' must be >= 1");
  }
}

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline Pipeline pipeline_from_string(const std::string& s) {
  return detail::parse_pipeline(s);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  using detail::fail;
  using detail::json;
  using detail::require;

  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    // e.what() carries the byte offset of the syntax error
    throw ConfigError(std::string("config: ") + e.what());
  }

  const json& jsys = require(j, "system", "");
  const Eigen::MatrixXd a = detail::parse_matrix(require(jsys, "A", "system"), "system.A");
  const Eigen::MatrixXd b = detail::parse_matrix(require(jsys, "B", "system"), "system.B");
  const Eigen::MatrixXd c = detail::parse_matrix(require(jsys, "C", "system"), "system.C");
  const Eigen::MatrixXd d = detail::parse_matrix(require(jsys, "D", "system"), "system.D");

  const json& jcost = require(j, "cost", "");
  const Eigen::MatrixXd q = detail::parse_matrix(require(jcost, "Q", "cost"), "cost.Q");
  const Eigen::MatrixXd r = detail::parse_matrix(require(jcost, "R", "cost"), "cost.R");

  const Eigen::VectorXd x0 =
      detail::parse_vector(require(j, "initial_state", ""), "initial_state");
  const Eigen::MatrixXd k0 =
      detail::parse_matrix(require(j, "initial_gain", ""), "initial_gain");

  const json& jsim = require(j, "sim", "");
  const json& jseed = require(jsim, "seed", "sim");  // no nondeterministic default
  if (!jseed.is_number_unsigned() && !jseed.is_number_integer()) {
    fail("field 'sim.seed' must be a non-negative integer");
  }

  try {
    SystemModel sys(a, b, c, d);
    const Eigen::MatrixXd s = jcost.contains("S")
                                  ? detail::parse_matrix(jcost["S"], "cost.S")
                                  : Eigen::MatrixXd::Zero(sys.m, sys.n);
    CostSpec cost(q, s, r);

    SimConfig sim;
    if (jsim.contains("dt")) sim.dt = detail::number_at(jsim["dt"], "sim.dt");
    if (jsim.contains("horizon")) sim.horizon = detail::number_at(jsim["horizon"], "sim.horizon");
    if (jsim.contains("n_paths")) sim.n_paths = jsim["n_paths"].get<int>();
    sim.seed = jseed.get<std::uint64_t>();

    rlpi::ExcitationPlan plan = rlpi::default_plan(sys.n);
    if (j.contains("plan")) {
      const json& jplan = j["plan"];
      if (jplan.contains("interval_length")) {
        plan.interval_length = detail::number_at(jplan["interval_length"], "plan.interval_length");
      }
      if (jplan.contains("mode")) {
        const std::string mode = jplan["mode"].get<std::string>();
        if (mode == "restart") {
          plan.mode = rlpi::ProbeMode::kRestart;
        } else if (mode == "sequential") {
          plan.mode = rlpi::ProbeMode::kSequential;
        } else {
          fail("field 'plan.mode' must be restart|sequential, got '" + mode + "'");
        }
      }
      if (jplan.contains("states")) {
        plan.initial_states.clear();
        for (std::size_t i = 0; i < jplan["states"].size(); ++i) {
          plan.initial_states.push_back(detail::parse_vector(
              jplan["states"][i], "plan.states[" + std::to_string(i) + "]"));
        }
      }
    }

    PiOptions exact_opts;
    rlpi::RlOptions rl_opts;
    if (j.contains("solver")) {
      const json& jsolver = j["solver"];
      double eps = 0.0;
      int max_iter = 0;
      detail::read_solver_block(jsolver, "solver", &eps, &max_iter);
      if (eps > 0.0) exact_opts.eps = rl_opts.eps = eps;
      if (max_iter > 0) exact_opts.max_iter = rl_opts.max_iter = max_iter;
      if (jsolver.contains("exact")) {
        detail::read_solver_block(jsolver["exact"], "solver.exact",
                                  &exact_opts.eps, &exact_opts.max_iter);
      }
      if (jsolver.contains("rl")) {
        detail::read_solver_block(jsolver["rl"], "solver.rl", &rl_opts.eps,
                                  &rl_opts.max_iter);
      }
    }

    sysid::EstimationConfig est;
    est.x0 = x0;
    est.seed = sim.seed;
    if (j.contains("sysid")) {
      const json& jest = j["sysid"];
      if (jest.contains("n_samples")) est.n_samples = jest["n_samples"].get<int>();
      if (jest.contains("sim_dt")) est.sim_dt = detail::number_at(jest["sim_dt"], "sysid.sim_dt");
      if (jest.contains("gain")) {
        est.gain = FeedbackGain{detail::parse_matrix(jest["gain"], "sysid.gain")};
      }
    }

    Pipeline pipeline = Pipeline::kExact;
    if (j.contains("pipeline")) {
      pipeline = detail::parse_pipeline(j["pipeline"].get<std::string>());
    }

    int dump_paths = 0;
    if (j.contains("dump_paths")) dump_paths = j["dump_paths"].get<int>();
    if (dump_paths < 0) fail("field 'dump_paths' must be >= 0");

    return ExperimentConfig{std::move(sys),  std::move(cost),
                            x0,              FeedbackGain{k0},
                            sim,             std::move(plan),
                            exact_opts,      rl_opts,
                            std::move(est),  pipeline,
                            dump_paths};
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config: invalid problem data: " + std::string(e.what()));
  }
}

namespace detail {

// vec+ ordering of the lower triangle: columns first, rows within a column.
inline void write_trace_csv(const std::filesystem::path& file, const PiTrace& trace,
                            int n, int m) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out << "i";
  for (int c = 0; c < n; ++c) {
    for (int r = c; r < n; ++r) {
      out << ",p_" << (r + 1) << "_" << (c + 1);
    }
  }
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      out << ",k_" << (r + 1) << "_" << (c + 1);
    }
  }
  out << ",delta_p,residual\n";
  for (const auto& it : trace.iterates) {
    out << it.iter;
    for (int c = 0; c < n; ++c) {
      for (int r = c; r < n; ++r) out << "," << fmt17(it.p(r, c));
    }
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) out << "," << fmt17(it.k.k(r, c));
    }
    out << "," << fmt17(it.delta_p) << "," << fmt17(it.residual) << "\n";
  }
}

inline void write_paths_csv(const std::filesystem::path& file, const PathBatch& batch) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out << "path_id,t";
  for (int i = 1; i <= batch.n; ++i) out << ",x_" << i;
  out << "\n";
  const int points = batch.steps() + 1;
  for (int k = 0; k < batch.n_paths; ++k) {
    for (int l = 0; l < points; ++l) {
      out << k << "," << fmt17(batch.times[l]);
      const auto col = batch.states.col(static_cast<Eigen::Index>(k) * points + l);
      for (int i = 0; i < batch.n; ++i) out << "," << fmt17(col[i]);
      out << "\n";
    }
  }
}

struct PipelineOutcome {
  int exit_code = 0;
  json summary;
  PiTrace trace;
  bool have_trace = false;
};

inline const char* pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::kExact: return "exact";
    case Pipeline::kRl: return "rl";
    case Pipeline::kSysid: return "sysid";
    default: return "all";
  }
}

inline PipelineOutcome execute(const ExperimentConfig& cfg, Pipeline which) {
  PipelineOutcome out;
  out.summary["seed"] = cfg.sim.seed;
  out.summary["pipeline"] = pipeline_name(which);
  switch (which) {
    case Pipeline::kExact: {
      try {
        out.trace = policy_iteration_exact(cfg.sys, cfg.cost, cfg.k0, cfg.exact_opts);
        out.have_trace = true;
      } catch (const MaxIterationsExceeded& e) {
        out.exit_code = 2;
        out.summary["converged"] = false;
        out.summary["iterations"] = cfg.exact_opts.max_iter;
        out.summary["error"] = e.what();
      }
      break;
    }
    case Pipeline::kRl: {
      out.trace = rlpi::run(cfg.sys, cfg.cost, cfg.k0, cfg.plan, cfg.sim, cfg.rl_opts);
      out.have_trace = true;
      break;
    }
    case Pipeline::kSysid: {
      sysid::EstimationConfig est = cfg.est;
      est.seed = cfg.sim.seed;  // one master seed drives every pipeline
      if (est.x0.size() == 0) est.x0 = cfg.x0;
      const sysid::PipelineResult res =
          sysid::model_based_pipeline(cfg.sys, cfg.cost, est, cfg.k0, cfg.exact_opts);
      out.trace = res.trace;
      out.have_trace = true;
      out.summary["A_hat"] = matrix_to_json(res.a_hat);
      out.summary["gram_condition"] = res.gram_condition;
      out.summary["deployed_K"] = matrix_to_json(res.deployed_gain.k);
      break;
    }
    default:
      throw std::logic_error("execute: 'all' is expanded by the caller");
  }
  if (out.have_trace) {
    const PiIterate& fin = out.trace.final();
    out.exit_code = out.trace.converged ? 0 : 2;
    out.summary["P"] = matrix_to_json(fin.p.mat());
    out.summary["K"] = matrix_to_json(fin.k.k);
    out.summary["iterations"] = out.trace.iterates.size();
    out.summary["converged"] = out.trace.converged;
    out.summary["final_residual"] = fin.residual;
  }
  return out;
}

inline int run_one(const ExperimentConfig& cfg, Pipeline which,
                   const std::filesystem::path& dir, std::ostream& err) {
  std::filesystem::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  PipelineOutcome out;
  try {
    out = execute(cfg, which);
  } catch (const std::exception& e) {
    err << "error [" << pipeline_name(which) << "]: " << e.what() << "\n";
    return 1;
  }
  const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - t0;
  out.summary["wall_clock_seconds"] = wall.count();

  write_trace_csv(dir / "trace.csv", out.have_trace ? out.trace : PiTrace{},
                  cfg.sys.n, cfg.sys.m);
  {
    std::ofstream sout(dir / "summary.json");
    if (!sout) throw Error("cannot write '" + (dir / "summary.json").string() + "'");
    sout << out.summary.dump(2) << "\n";
  }
  if (cfg.dump_paths > 0 && out.have_trace) {
    SimConfig dump_cfg = cfg.sim;
    dump_cfg.n_paths = cfg.dump_paths;
    write_paths_csv(dir / "paths.csv",
                    simulate(cfg.sys, out.trace.final().k, cfg.x0, dump_cfg));
  }
  return out.exit_code;
}

}  // namespace detail

// Runs the configured pipeline(s), writing artifacts under out_dir (one
// subdirectory per pipeline when pipeline = all).  Returns the process exit
// code: 0 converged, 2 ran but did not converge, 1 error.
inline int run_experiment(const ExperimentConfig& cfg,
                          const std::filesystem::path& out_dir,
                          std::ostream& err = std::cerr) {
  std::vector<std::pair<Pipeline, std::filesystem::path>> jobs;
  if (cfg.pipeline == Pipeline::kAll) {
    jobs = {{Pipeline::kExact, out_dir / "exact"},
            {Pipeline::kRl, out_dir / "rl"},
            {Pipeline::kSysid, out_dir / "sysid"}};
  } else {
    jobs = {{cfg.pipeline, out_dir}};
  }
  bool any_error = false;
  bool any_nonconverged = false;
  for (const auto& [which, dir] : jobs) {
    int code = 1;
    try {
      code = detail::run_one(cfg, which, dir, err);
    } catch (const std::exception& e) {
      err << "error [" << detail::pipeline_name(which) << "]: " << e.what() << "\n";
      code = 1;
    }
    any_error = any_error || code == 1;
    any_nonconverged = any_nonconverged || code == 2;
  }
  if (any_error) return 1;
  if (any_nonconverged) return 2;
  return 0;
}

// Accepts a P specification that is either inline JSON ("[[..],[..]]"), a
// file holding such an array, or a summary.json (object with a "P" field).
inline SymMatrix parse_p_argument(const std::string& arg) {
  using detail::json;
  std::string text = arg;
  const auto first = arg.find_first_not_of(" \t\r\n");
  const char lead = first == std::string::npos ? '\0' : arg[first];
  if (lead != '[' && lead != '{') {
    std::ifstream in(arg);
    if (!in) throw ConfigError("verify: cannot open P file '" + arg + "'");
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("verify: P is not valid JSON: ") + e.what());
  }
  if (j.is_object()) {
    if (!j.contains("P")) throw ConfigError("verify: object form needs a 'P' field");
    j = j["P"];
  }
  try {
    return SymMatrix(detail::parse_matrix(j, "P"));
  } catch (const std::exception& e) {
    throw ConfigError("verify: invalid P: " + std::string(e.what()));
  }
}

// Prints the Riccati residual at P, its Frobenius norm, and whether P is
// positive definite.  Exit 0 iff the norm is within tol.
inline int verify(const ExperimentConfig& cfg, const SymMatrix& p, double tol,
                  std::ostream& out = std::cout) {
  const SymMatrix res = sare_residual(cfg.sys, cfg.cost, p);
  const double norm = res.mat().norm();
  out << "R(P) =\n";
  for (int r = 0; r < res.dim(); ++r) {
    out << " ";
    for (int c = 0; c < res.dim(); ++c) out << " " << detail::fmt17(res(r, c));
    out << "\n";
  }
  out << "||R(P)||_F = " << detail::fmt17(norm) << "\n";
  out << "P positive definite: " << (is_positive_definite(p) ? "yes" : "no") << "\n";
  return norm <= tol ? 0 : 1;
}

}  // namespace experiment
}  // namespace slq
