// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_RUN_HPP
#define SABRA_RUN_HPP

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sabra/io.hpp"
#include "sabra/selfcheck.hpp"

namespace sabra {

inline constexpr const char* kReportFormat = "sabra-report/1";

struct RunResult {
  std::optional<Trajectory> trajectory;
  Json report;
  std::vector<std::string> lines;  // human-readable summary for stdout
  bool check_failed = false;
};

namespace detail {

inline Json to_json(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(x);
  return out;
}

inline Json diagnostics_json(const ShellParams& params, const Trajectory& traj) {
  const Diagnostics d = diagnostics(params, traj);
  return {{"time", to_json(d.time)},
          {"energy", to_json(d.energy)},
          {"enstrophy", to_json(d.enstrophy)},
          {"helicity", to_json(d.helicity)},
          {"spectrum", to_json(d.spectrum)}};
}

inline std::string format(const char* fmt, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

inline std::vector<ShellState> desired_states(const RunConfig& cfg, const ShellState& u0,
                                              const ForcingSpec& f,
                                              const std::filesystem::path& base_dir) {
  const TargetSpec& t = cfg.optimize.target;
  switch (t.kind) {
    case TargetSpec::Kind::kFreeFlow:
      return simulate(cfg.params, make_initial_state(cfg.params, t.initial, cfg.seed), f,
                      cfg.grid, Scheme::kSemiImplicitEuler)
          .states;
    case TargetSpec::Kind::kTwin:
      return simulate(cfg.params, u0, f, make_control(t.control, cfg.grid, cfg.params.n_shells()),
                      cfg.grid, Scheme::kSemiImplicitEuler)
          .states;
    case TargetSpec::Kind::kCsv: {
      std::filesystem::path path = t.path;
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      return parse_trajectory_csv(read_text_file(path), cfg.params.n_shells(), cfg.grid,
                                  path.string());
    }
  }
  return {};
}

inline double tracking_error(const Trajectory& t, const std::vector<ShellState>& desired) {
  double acc = 0.0;
  for (int k = 1; k <= t.grid.n_steps(); ++k)
    acc += (t.at(k) - desired[static_cast<std::size_t>(k)]).squaredNorm();
  return std::sqrt(acc * t.grid.dt());
}

inline void run_optimize(const RunConfig& cfg, const std::filesystem::path& base_dir,
                         RunResult& out) {
  const ShellState u0 = make_initial_state(cfg.params, cfg.initial, cfg.seed);
  const ForcingSpec f = make_forcing(cfg.forcing);
  const OptimizeTask& task = cfg.optimize;
  CostSpec spec = CostSpec::j1();
  std::vector<ShellState> desired;
  if (task.cost == CostKind::kJ2) {
    desired = desired_states(cfg, u0, f, base_dir);
    spec = CostSpec::j2(task.beta, desired, task.terminal_penalty);
  }
  const OptimizeResult r = optimize(cfg.params, spec, u0, f, cfg.grid, task.optimizer);
  const OptimizationReport& rep = r.report;
  bool monotone = true;
  for (std::size_t i = 1; i < rep.cost.size(); ++i) monotone = monotone && rep.cost[i] <= rep.cost[i - 1];

  Json o;
  o["cost_kind"] = task.cost == CostKind::kJ1 ? "J1" : "J2";
  o["converged"] = rep.converged;
  o["iterations"] = rep.iterations;
  o["rejected_blowups"] = rep.rejected_blowups;
  o["cost_monotone"] = monotone;
  o["initial_cost"] = rep.cost.front();
  o["final_cost"] = rep.cost.back();
  o["final_residual"] = rep.final_residual;
  o["optimality_residual"] = optimality_residual(cfg.params, spec, r.control, u0, f, cfg.grid);
  o["cost"] = to_json(rep.cost);
  o["grad_norm"] = to_json(rep.grad_norm);
  o["step"] = to_json(rep.step);
  if (task.cost == CostKind::kJ2) {
    const Trajectory free = simulate(cfg.params, u0, f, cfg.grid, Scheme::kSemiImplicitEuler);
    const double e0 = tracking_error(free, desired), e1 = tracking_error(r.trajectory, desired);
    o["tracking_error_uncontrolled"] = e0;
    o["tracking_error_optimized"] = e1;
  }
  out.report["optimization"] = o;

  out.lines.push_back("cost " + format("%.9g", rep.cost.front()) + " -> " +
                      format("%.9g", rep.cost.back()) + " in " +
                      std::to_string(rep.iterations) + " iterations" +
                      (monotone ? " (monotone)" : " (NOT monotone)"));
  out.lines.push_back("optimality residual " + format("%.3e", o["optimality_residual"].get<double>()) +
                      (rep.converged ? " (converged)" : " (not converged)"));
  out.trajectory = r.trajectory;
}

inline void run_feedback(const RunConfig& cfg, RunResult& out) {
  const ShellState u0 = make_initial_state(cfg.params, cfg.initial, cfg.seed);
  const ForcingSpec f = make_forcing(cfg.forcing);
  const FeedbackTask& task = cfg.feedback;
  const ConstraintSet K = ConstraintSet::make(task.constraint, task.rho);
  std::optional<ModeMask> mask;
  FeedbackLaw law;
  if (task.law == FeedbackTask::Law::kEnstrophy) {
    law = task.enstrophy;
  } else {
    mask = ModeMask::make(task.mask, cfg.params.n_shells());
    law = PenaltyLaw{*mask, PenaltyConfig{task.penalty_lambda}};
  }
  const ClosedLoopResult r = simulate_closed_loop(cfg.params, u0, f, law, K, cfg.grid, cfg.scheme);

  Json inv;
  inv["law"] = task.law == FeedbackTask::Law::kEnstrophy ? "enstrophy" : "penalty";
  inv["constraint"] = std::string(to_string(K.kind()));
  inv["rho"] = K.rho();
  inv["max_excess"] = r.report.max_excess;
  inv["max_raw_excess"] = r.max_raw_excess;
  inv["fraction_inside"] = r.report.fraction_inside;
  inv["integral_d2"] = r.report.integral_d2;
  if (r.report.scaled_integral) inv["scaled_integral"] = *r.report.scaled_integral;
  inv["safeguard_projections"] = r.safeguard_projections;
  if (mask) inv["commutation_defect"] = r.commutation_defect;
  try {
    const Trajectory free = simulate(cfg.params, u0, f, cfg.grid, cfg.scheme);
    inv["uncontrolled_max_excess"] = invariance_report(cfg.params, free, K, mask).max_excess;
  } catch (const BlowUpError&) {
    inv["uncontrolled_max_excess"] = nullptr;  // the free run diverged
  }
  out.report["invariance"] = inv;

  out.lines.push_back("max excess " + format("%.3e", r.report.max_excess) + " (raw " +
                      format("%.3e", r.max_raw_excess) + "), inside fraction " +
                      format("%.4f", r.report.fraction_inside));
  out.lines.push_back("integral d^2 " + format("%.6e", r.report.integral_d2));
  out.trajectory = r.trajectory;
}

inline void run_check(RunResult& out) {
  Json suites = Json::array();
  bool all = true;
  for (const check::SuiteResult& s : check::run_all()) {
    Json props = Json::array();
    for (const check::Property& p : s.properties) {
      Json pj;
      pj["name"] = p.name;
      pj["relation"] = p.relation == check::Relation::kAtMost    ? "at_most"
                       : p.relation == check::Relation::kAtLeast ? "at_least"
                                                                 : "within";
      pj["value"] = p.value;
      pj["limit"] = p.limit;
      if (p.relation == check::Relation::kWithin) pj["target"] = p.target;
      pj["passed"] = p.passed;
      props.push_back(pj);
      out.lines.push_back(std::string(p.passed ? "PASS " : "FAIL ") + std::to_string(s.id) +
                          " " + s.name + "/" + p.name + ": " + check::describe(p));
    }
    // Timing stays out of the report so that reruns are byte-identical.
    out.lines.push_back(std::string(s.within_budget() ? "PASS " : "FAIL ") +
                        std::to_string(s.id) + " " + s.name + "/time: " +
                        format("%.2f s", s.seconds) + " <= " + format("%.0f s", s.budget_seconds));
    suites.push_back({{"id", s.id},
                      {"name", s.name},
                      {"passed", s.passed()},
                      {"budget_seconds", s.budget_seconds},
                      {"properties", props}});
    all = all && s.passed();
  }
  out.report["check"] = {{"passed", all}, {"suites", suites}};
  out.check_failed = !all;
}

inline void run_spectrum(const RunConfig& cfg, RunResult& out) {
  const Trajectory t = simulate(cfg.params, make_initial_state(cfg.params, cfg.initial, cfg.seed),
                                make_forcing(cfg.forcing), cfg.grid, cfg.scheme);
  const Diagnostics d = diagnostics(cfg.params, t);
  Json rows = Json::array();
  out.lines.push_back("shell k mean_energy");
  for (int n = 1; n <= cfg.params.n_shells(); ++n) {
    const double e = d.spectrum[static_cast<std::size_t>(n - 1)];
    rows.push_back({{"shell", n}, {"k", cfg.params.k(n)}, {"mean_energy", e}});
    out.lines.push_back(std::to_string(n) + " " + format("%.6g", cfg.params.k(n)) + " " +
                        format("%.9e", e));
  }
  out.report["spectrum"] = rows;
  out.report["diagnostics"] = diagnostics_json(cfg.params, t);
}

}  // namespace detail

/// Runs the configured task. Relative paths inside the config resolve against
/// base_dir. Throws InputError, BlowUpError or IoError.
inline RunResult run(const RunConfig& cfg, const std::filesystem::path& base_dir = {}) {
  RunResult out;
  out.report["format"] = kReportFormat;
  out.report["task"] = std::string(to_string(cfg.task));
  out.report["config"] = emit_config(cfg);
  out.report["defaults_applied"] = cfg.defaulted;
  switch (cfg.task) {
    case TaskKind::kSimulate:
      out.trajectory = simulate(cfg.params, make_initial_state(cfg.params, cfg.initial, cfg.seed),
                                make_forcing(cfg.forcing), cfg.grid, cfg.scheme);
      break;
    case TaskKind::kOptimize:
      detail::run_optimize(cfg, base_dir, out);
      break;
    case TaskKind::kFeedback:
      detail::run_feedback(cfg, out);
      break;
    case TaskKind::kCheck:
      detail::run_check(out);
      break;
    case TaskKind::kSpectrum:
      detail::run_spectrum(cfg, out);
      break;
  }
  if (out.trajectory) {
    out.report["diagnostics"] = detail::diagnostics_json(cfg.params, *out.trajectory);
    const std::size_t last = out.trajectory->states.size() - 1;
    const Json& dj = out.report["diagnostics"];
    out.lines.push_back("final energy " + detail::format("%.9e", dj["energy"][last].get<double>()) +
                        ", enstrophy " + detail::format("%.9e", dj["enstrophy"][last].get<double>()));
  }
  out.report["status"] = out.check_failed ? "check_failed" : "ok";
  return out;
}

}  // namespace sabra

#endif  // SABRA_RUN_HPP
