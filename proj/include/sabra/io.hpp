// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_IO_HPP
#define SABRA_IO_HPP

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sabra/adjoint.hpp"
#include "sabra/constraint.hpp"
#include "sabra/integrator.hpp"
#include "sabra/optimize.hpp"
#include "sabra/shell_core.hpp"

namespace sabra {

using Json = nlohmann::ordered_json;

/// Raised for file-system failures; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutputDirEnv = "SABRA_OUTPUT_DIR";

// ---------------------------------------------------------------------------
// Config model

struct InitialSpec {
  enum class Kind { kRandom, kExplicit };
  Kind kind = Kind::kRandom;
  double scale = 1.0;                 // random: u_n = scale lambda^{-n/2}(xi + i eta)
  std::optional<std::uint64_t> seed;  // random: falls back to the run seed
  std::vector<cplx> values;           // explicit
};

/// Forcing or a prescribed control: zero, one amplitude on every shell, or one
/// amplitude per shell, constant in time.
struct SourceSpec {
  enum class Kind { kZero, kConstant, kPerShell };
  Kind kind = Kind::kZero;
  cplx value{0.0, 0.0};
  std::vector<cplx> values;
};

struct TargetSpec {
  enum class Kind { kFreeFlow, kTwin, kCsv };
  Kind kind = Kind::kTwin;
  InitialSpec initial;  // free_flow: start of the uncontrolled target flow
  SourceSpec control;   // twin: control that generated the target
  std::string path;     // csv
};

struct OptimizeTask {
  CostKind cost = CostKind::kJ2;
  double beta = 1e-3;
  bool terminal_penalty = true;
  TargetSpec target;
  OptimizeConfig optimizer;
};

struct FeedbackTask {
  enum class Law { kEnstrophy, kPenalty };
  Law law = Law::kEnstrophy;
  ConstraintSet::Kind constraint = ConstraintSet::Kind::kEnstrophyBall;
  double rho = 1.0;
  EnstrophyLaw enstrophy;
  std::vector<int> mask;  // penalty law; empty means every shell
  double penalty_lambda = 1e-2;
};

enum class TaskKind { kSimulate, kOptimize, kFeedback, kCheck, kSpectrum };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kSimulate: return "simulate";
    case TaskKind::kOptimize: return "optimize";
    case TaskKind::kFeedback: return "feedback";
    case TaskKind::kCheck: return "check";
    case TaskKind::kSpectrum: return "spectrum";
  }
  return "simulate";
}

struct OutputSpec {
  std::string dir = "out";
  std::string trajectory = "trajectory.csv";
  std::string report = "report.json";
  std::string control = "control.csv";  // optimize and feedback only
};

struct RunConfig {
  ShellParams params = ShellParams::make(6);
  TimeGrid grid = TimeGrid::make(1.0, 0.01);
  Scheme scheme = Scheme::kSemiImplicitEuler;
  InitialSpec initial;
  SourceSpec forcing;
  TaskKind task = TaskKind::kSimulate;
  OptimizeTask optimize;
  FeedbackTask feedback;
  OutputSpec output;
  std::uint64_t seed = 0;
  std::vector<std::string> defaulted;  // model/scheme keys filled by defaults
};

// ---------------------------------------------------------------------------
// JSON reading helpers

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw InputError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw InputError(where + ": unknown key \"" + key + "\"");
  }
}

inline double get_number(const Json& j, const char* key, double fallback,
                         const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number()) throw InputError(where + "." + key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw InputError(where + "." + key + ": must be finite");
  return x;
}

inline long long get_integer(const Json& j, const char* key, long long fallback,
                             const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number_integer()) throw InputError(where + "." + key + ": expected an integer");
  return v.get<long long>();
}

inline bool get_bool(const Json& j, const char* key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_boolean()) throw InputError(where + "." + key + ": expected true or false");
  return v.get<bool>();
}

inline std::string get_string(const Json& j, const char* key, std::string fallback,
                              const std::string& where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_string()) throw InputError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

/// A complex number is either a real number or a [re, im] pair.
inline cplx to_complex(const Json& v, const std::string& where) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return {v[0].get<double>(), v[1].get<double>()};
  throw InputError(where + ": expected a number or [re, im]");
}

inline std::vector<cplx> to_complex_list(const Json& v, const std::string& where) {
  if (!v.is_array()) throw InputError(where + ": expected an array");
  std::vector<cplx> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(to_complex(v[i], where + "[" + std::to_string(i) + "]"));
  for (const auto& z : out)
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
      throw InputError(where + ": non-finite entry");
  return out;
}

inline Json from_complex(cplx z) { return Json::array({z.real(), z.imag()}); }

inline Json from_complex_list(const std::vector<cplx>& v) {
  Json out = Json::array();
  for (const auto& z : v) out.push_back(from_complex(z));
  return out;
}

inline ShellState to_state(const std::vector<cplx>& v) {
  ShellState u(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) u(static_cast<Eigen::Index>(i)) = v[i];
  return u;
}

inline InitialSpec parse_initial(const Json& j, const std::string& where) {
  check_keys(j, {"kind", "scale", "seed", "values"}, where);
  InitialSpec s;
  const std::string kind = get_string(j, "kind", "random", where);
  if (kind == "random") {
    check_keys(j, {"kind", "scale", "seed"}, where);
    s.kind = InitialSpec::Kind::kRandom;
    s.scale = get_number(j, "scale", 1.0, where);
    if (!(s.scale >= 0.0)) throw InputError(where + ".scale: must be >= 0");
    if (j.contains("seed")) {
      const long long seed = get_integer(j, "seed", 0, where);
      if (seed < 0) throw InputError(where + ".seed: must be >= 0");
      s.seed = static_cast<std::uint64_t>(seed);
    }
  } else if (kind == "explicit") {
    check_keys(j, {"kind", "values"}, where);
    s.kind = InitialSpec::Kind::kExplicit;
    if (!j.contains("values")) throw InputError(where + ".values: required for explicit");
    s.values = to_complex_list(j.at("values"), where + ".values");
  } else {
    throw InputError(where + ".kind: expected \"random\" or \"explicit\"");
  }
  return s;
}

inline SourceSpec parse_source(const Json& j, const std::string& where) {
  check_keys(j, {"kind", "value", "values"}, where);
  SourceSpec s;
  const std::string kind = get_string(j, "kind", "zero", where);
  if (kind == "zero") {
    check_keys(j, {"kind"}, where);
  } else if (kind == "constant") {
    check_keys(j, {"kind", "value"}, where);
    s.kind = SourceSpec::Kind::kConstant;
    if (!j.contains("value")) throw InputError(where + ".value: required for constant");
    s.value = to_complex(j.at("value"), where + ".value");
    if (!std::isfinite(s.value.real()) || !std::isfinite(s.value.imag()))
      throw InputError(where + ".value: must be finite");
  } else if (kind == "per_shell") {
    check_keys(j, {"kind", "values"}, where);
    s.kind = SourceSpec::Kind::kPerShell;
    if (!j.contains("values")) throw InputError(where + ".values: required for per_shell");
    s.values = to_complex_list(j.at("values"), where + ".values");
  } else {
    throw InputError(where + ".kind: expected \"zero\", \"constant\" or \"per_shell\"");
  }
  return s;
}

inline Json emit_initial(const InitialSpec& s) {
  Json j;
  if (s.kind == InitialSpec::Kind::kRandom) {
    j["kind"] = "random";
    j["scale"] = s.scale;
    if (s.seed) j["seed"] = *s.seed;
  } else {
    j["kind"] = "explicit";
    j["values"] = from_complex_list(s.values);
  }
  return j;
}

inline Json emit_source(const SourceSpec& s) {
  Json j;
  switch (s.kind) {
    case SourceSpec::Kind::kZero:
      j["kind"] = "zero";
      break;
    case SourceSpec::Kind::kConstant:
      j["kind"] = "constant";
      j["value"] = from_complex(s.value);
      break;
    case SourceSpec::Kind::kPerShell:
      j["kind"] = "per_shell";
      j["values"] = from_complex_list(s.values);
      break;
  }
  return j;
}

inline void check_length(const std::vector<cplx>& v, int n, const std::string& where) {
  if (static_cast<int>(v.size()) != n)
    throw InputError(where + ": expected " + std::to_string(n) + " entries, got " +
                     std::to_string(v.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config parse / emit

inline Json emit_config(const RunConfig& c) {
  using detail::emit_initial;
  using detail::emit_source;
  Json j;
  j["model"] = {{"n_shells", c.params.n_shells()}, {"k0", c.params.k0()},
                {"lambda", c.params.lambda()},     {"a", c.params.a()},
                {"b", c.params.b()},               {"c", c.params.c()},
                {"nu", c.params.nu()}};
  j["grid"] = {{"t_end", c.grid.t_end()}, {"dt", c.grid.dt()}};
  j["scheme"] = std::string(to_string(c.scheme));
  j["seed"] = c.seed;
  j["initial"] = emit_initial(c.initial);
  j["forcing"] = emit_source(c.forcing);

  Json body = Json::object();
  if (c.task == TaskKind::kOptimize) {
    const OptimizeTask& o = c.optimize;
    body["cost"] = o.cost == CostKind::kJ1 ? "J1" : "J2";
    if (o.cost == CostKind::kJ2) {
      body["beta"] = o.beta;
      body["terminal_penalty"] = o.terminal_penalty;
      Json t;
      switch (o.target.kind) {
        case TargetSpec::Kind::kFreeFlow:
          t["kind"] = "free_flow";
          t["initial"] = emit_initial(o.target.initial);
          break;
        case TargetSpec::Kind::kTwin:
          t["kind"] = "twin";
          t["control"] = emit_source(o.target.control);
          break;
        case TargetSpec::Kind::kCsv:
          t["kind"] = "csv";
          t["path"] = o.target.path;
          break;
      }
      body["target"] = t;
    }
    const OptimizeConfig& oc = o.optimizer;
    body["optimizer"] = {{"max_iters", oc.max_iters}, {"step0", oc.step0},
                         {"armijo_c", oc.armijo_c},   {"shrink", oc.shrink},
                         {"tol_grad", oc.tol_grad},   {"max_backtracks", oc.max_backtracks},
                         {"seed", oc.seed}};
  } else if (c.task == TaskKind::kFeedback) {
    const FeedbackTask& f = c.feedback;
    body["law"] = f.law == FeedbackTask::Law::kEnstrophy ? "enstrophy" : "penalty";
    body["constraint"] = {{"kind", std::string(to_string(f.constraint))}, {"rho", f.rho}};
    if (f.law == FeedbackTask::Law::kEnstrophy) {
      body["band"] = f.enstrophy.band;
      body["minimal_norm"] = f.enstrophy.minimal_norm;
      body["complex_pairing"] = f.enstrophy.complex_pairing;
      body["safeguard"] = f.enstrophy.safeguard;
    } else {
      body["mask"] = f.mask;
      body["penalty_lambda"] = f.penalty_lambda;
    }
  }
  j["task"] = {{std::string(to_string(c.task)), body}};
  j["output"] = {{"dir", c.output.dir},
                 {"trajectory", c.output.trajectory},
                 {"report", c.output.report},
                 {"control", c.output.control}};
  return j;
}

/// Validates every field before any computation. Missing fields take the
/// defaults shown by emit_config.
inline RunConfig parse_config(const Json& j) {
  using namespace detail;
  check_keys(j, {"model", "grid", "scheme", "seed", "initial", "forcing", "task", "output"},
             "config");
  RunConfig c;

  if (!j.contains("model")) throw InputError("config.model: required");
  const Json& m = j.at("model");
  check_keys(m, {"n_shells", "k0", "lambda", "a", "b", "c", "nu"}, "model");
  if (!m.contains("n_shells")) throw InputError("model.n_shells: required");
  const long long n = get_integer(m, "n_shells", 0, "model");
  if (n < 1 || n > 100000) throw InputError("model.n_shells: must lie in [1, 100000]");
  for (const char* key : {"k0", "lambda", "a", "b", "c", "nu"})
    if (!m.contains(key)) c.defaulted.push_back(std::string("model.") + key);
  if (!j.contains("scheme")) c.defaulted.push_back("scheme");
  const double a = get_number(m, "a", ShellParams::kDefaultA, "model");
  const double b = get_number(m, "b", ShellParams::kDefaultB, "model");
  const double k0 = get_number(m, "k0", ShellParams::kDefaultK0, "model");
  const double lambda = get_number(m, "lambda", ShellParams::kDefaultLambda, "model");
  const double nu = get_number(m, "nu", ShellParams::kDefaultNu, "model");
  if (m.contains("c")) {
    c.params = ShellParams::make(static_cast<int>(n), k0, lambda, a, b,
                                 get_number(m, "c", 0.0, "model"), nu);
  } else {
    c.params = ShellParams::make(static_cast<int>(n), k0, lambda, a, b, nu);
  }

  if (!j.contains("grid")) throw InputError("config.grid: required");
  const Json& g = j.at("grid");
  check_keys(g, {"t_end", "dt"}, "grid");
  if (!g.contains("t_end") || !g.contains("dt"))
    throw InputError("grid: t_end and dt are required");
  c.grid = TimeGrid::make(get_number(g, "t_end", 1.0, "grid"), get_number(g, "dt", 0.01, "grid"));

  c.scheme = parse_scheme(get_string(j, "scheme", "semi-implicit-euler", "config"));
  const long long seed = get_integer(j, "seed", 0, "config");
  if (seed < 0) throw InputError("config.seed: must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);

  const int N = c.params.n_shells();
  if (j.contains("initial")) c.initial = parse_initial(j.at("initial"), "initial");
  if (c.initial.kind == InitialSpec::Kind::kExplicit)
    check_length(c.initial.values, N, "initial.values");
  if (j.contains("forcing")) c.forcing = parse_source(j.at("forcing"), "forcing");
  if (c.forcing.kind == SourceSpec::Kind::kPerShell)
    check_length(c.forcing.values, N, "forcing.values");

  if (!j.contains("task")) throw InputError("config.task: required");
  const Json& t = j.at("task");
  std::string task_name;
  Json body = Json::object();
  if (t.is_string()) {
    task_name = t.get<std::string>();
  } else if (t.is_object() && t.size() == 1) {
    task_name = t.begin().key();
    body = t.begin().value();
    if (body.is_null()) body = Json::object();
  } else {
    throw InputError("config.task: expected a task name or an object with one key");
  }
  const std::string where = "task." + task_name;
  if (task_name == "simulate") {
    c.task = TaskKind::kSimulate;
    check_keys(body, {}, where);
  } else if (task_name == "spectrum") {
    c.task = TaskKind::kSpectrum;
    check_keys(body, {}, where);
  } else if (task_name == "check") {
    c.task = TaskKind::kCheck;
    check_keys(body, {}, where);
  } else if (task_name == "optimize") {
    c.task = TaskKind::kOptimize;
    check_keys(body, {"cost", "beta", "terminal_penalty", "target", "optimizer"}, where);
    OptimizeTask& o = c.optimize;
    const std::string cost = get_string(body, "cost", "J2", where);
    if (cost == "J1") {
      o.cost = CostKind::kJ1;
      check_keys(body, {"cost", "optimizer"}, where);
    } else if (cost == "J2") {
      o.cost = CostKind::kJ2;
    } else {
      throw InputError(where + ".cost: expected \"J1\" or \"J2\"");
    }
    o.beta = get_number(body, "beta", o.beta, where);
    if (!(o.beta > 0.0)) throw InputError(where + ".beta: must be > 0");
    o.terminal_penalty = get_bool(body, "terminal_penalty", true, where);
    if (o.cost == CostKind::kJ2) {
      if (!body.contains("target")) throw InputError(where + ".target: required for J2");
      const Json& tg = body.at("target");
      const std::string tw = where + ".target";
      check_keys(tg, {"kind", "initial", "control", "path"}, tw);
      const std::string kind = get_string(tg, "kind", "", tw);
      if (kind == "free_flow") {
        check_keys(tg, {"kind", "initial"}, tw);
        o.target.kind = TargetSpec::Kind::kFreeFlow;
        if (!tg.contains("initial")) throw InputError(tw + ".initial: required for free_flow");
        o.target.initial = parse_initial(tg.at("initial"), tw + ".initial");
        if (o.target.initial.kind == InitialSpec::Kind::kExplicit)
          check_length(o.target.initial.values, N, tw + ".initial.values");
      } else if (kind == "twin") {
        check_keys(tg, {"kind", "control"}, tw);
        o.target.kind = TargetSpec::Kind::kTwin;
        if (!tg.contains("control")) throw InputError(tw + ".control: required for twin");
        o.target.control = parse_source(tg.at("control"), tw + ".control");
        if (o.target.control.kind == SourceSpec::Kind::kPerShell)
          check_length(o.target.control.values, N, tw + ".control.values");
      } else if (kind == "csv") {
        check_keys(tg, {"kind", "path"}, tw);
        o.target.kind = TargetSpec::Kind::kCsv;
        o.target.path = get_string(tg, "path", "", tw);
        if (o.target.path.empty()) throw InputError(tw + ".path: required for csv");
      } else {
        throw InputError(tw + ".kind: expected \"free_flow\", \"twin\" or \"csv\"");
      }
    }
    if (body.contains("optimizer")) {
      const Json& oj = body.at("optimizer");
      const std::string ow = where + ".optimizer";
      check_keys(oj, {"max_iters", "step0", "armijo_c", "shrink", "tol_grad",
                      "max_backtracks", "seed"},
                 ow);
      OptimizeConfig& oc = o.optimizer;
      oc.max_iters = static_cast<int>(get_integer(oj, "max_iters", oc.max_iters, ow));
      oc.step0 = get_number(oj, "step0", oc.step0, ow);
      oc.armijo_c = get_number(oj, "armijo_c", oc.armijo_c, ow);
      oc.shrink = get_number(oj, "shrink", oc.shrink, ow);
      oc.tol_grad = get_number(oj, "tol_grad", oc.tol_grad, ow);
      oc.max_backtracks =
          static_cast<int>(get_integer(oj, "max_backtracks", oc.max_backtracks, ow));
      const long long os = get_integer(oj, "seed", 0, ow);
      if (os < 0) throw InputError(ow + ".seed: must be >= 0");
      oc.seed = static_cast<std::uint64_t>(os);
    }
    o.optimizer.validate();
    if (c.scheme != Scheme::kSemiImplicitEuler)
      throw InputError(where + ": gradients are exact only for scheme semi-implicit-euler");
  } else if (task_name == "feedback") {
    c.task = TaskKind::kFeedback;
    check_keys(body, {"law", "constraint", "band", "minimal_norm", "complex_pairing",
                      "safeguard", "mask", "penalty_lambda"},
               where);
    FeedbackTask& f = c.feedback;
    const std::string law = get_string(body, "law", "enstrophy", where);
    if (law == "enstrophy") {
      f.law = FeedbackTask::Law::kEnstrophy;
      check_keys(body, {"law", "constraint", "band", "minimal_norm", "complex_pairing",
                        "safeguard"},
                 where);
    } else if (law == "penalty") {
      f.law = FeedbackTask::Law::kPenalty;
      check_keys(body, {"law", "constraint", "mask", "penalty_lambda"}, where);
    } else {
      throw InputError(where + ".law: expected \"enstrophy\" or \"penalty\"");
    }
    if (!body.contains("constraint")) throw InputError(where + ".constraint: required");
    const Json& kj = body.at("constraint");
    check_keys(kj, {"kind", "rho"}, where + ".constraint");
    f.constraint = parse_constraint_kind(
        get_string(kj, "kind", f.law == FeedbackTask::Law::kEnstrophy ? "enstrophy_ball"
                                                                      : "helicity_ball",
                   where + ".constraint"));
    if (!kj.contains("rho")) throw InputError(where + ".constraint.rho: required");
    f.rho = get_number(kj, "rho", 1.0, where + ".constraint");
    if (!(f.rho > 0.0)) throw InputError(where + ".constraint.rho: must be > 0");
    if (f.law == FeedbackTask::Law::kEnstrophy) {
      if (f.constraint != ConstraintSet::Kind::kEnstrophyBall)
        throw InputError(where + ".constraint.kind: the enstrophy law needs enstrophy_ball");
      f.enstrophy.band = get_number(body, "band", f.enstrophy.band, where);
      if (!(f.enstrophy.band >= 0.0 && f.enstrophy.band < 1.0))
        throw InputError(where + ".band: must lie in [0, 1)");
      f.enstrophy.minimal_norm = get_bool(body, "minimal_norm", true, where);
      f.enstrophy.complex_pairing = get_bool(body, "complex_pairing", false, where);
      f.enstrophy.safeguard = get_bool(body, "safeguard", true, where);
    } else {
      if (body.contains("mask")) {
        const Json& mj = body.at("mask");
        if (!mj.is_array()) throw InputError(where + ".mask: expected an array of shells");
        for (const auto& v : mj) {
          if (!v.is_number_integer()) throw InputError(where + ".mask: expected integers");
          f.mask.push_back(v.get<int>());
        }
        if (f.mask.empty()) throw InputError(where + ".mask: must not be empty");
        ModeMask::make(f.mask, N);
      } else {
        for (int s = 1; s <= N; ++s) f.mask.push_back(s);
      }
      f.penalty_lambda = get_number(body, "penalty_lambda", f.penalty_lambda, where);
      PenaltyConfig{f.penalty_lambda}.validate();
    }
  } else {
    throw InputError("config.task: unknown task \"" + task_name + "\"");
  }

  if (j.contains("output")) {
    const Json& oj = j.at("output");
    check_keys(oj, {"dir", "trajectory", "report", "control"}, "output");
    c.output.dir = get_string(oj, "dir", c.output.dir, "output");
    c.output.trajectory = get_string(oj, "trajectory", c.output.trajectory, "output");
    c.output.report = get_string(oj, "report", c.output.report, "output");
    c.output.control = get_string(oj, "control", c.output.control, "output");
    if (c.output.trajectory.empty() || c.output.report.empty() || c.output.control.empty())
      throw InputError("output: file names must not be empty");
  }
  return c;
}

inline RunConfig parse_config_text(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config: malformed JSON at byte " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  return parse_config(j);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

// ---------------------------------------------------------------------------
// Materializing config pieces

inline ShellState make_initial_state(const ShellParams& params, const InitialSpec& s,
                                     std::uint64_t run_seed) {
  if (s.kind == InitialSpec::Kind::kExplicit) return detail::to_state(s.values);
  return random_initial_state(params, s.seed.value_or(run_seed), s.scale);
}

inline ForcingSpec make_forcing(const SourceSpec& s) {
  switch (s.kind) {
    case SourceSpec::Kind::kZero: return ForcingSpec::zero();
    case SourceSpec::Kind::kConstant: return ForcingSpec::constant(s.value);
    case SourceSpec::Kind::kPerShell: return ForcingSpec::per_shell(detail::to_state(s.values));
  }
  return ForcingSpec::zero();
}

inline ControlGrid make_control(const SourceSpec& s, const TimeGrid& grid, int n_shells) {
  const ForcingSpec f = make_forcing(s);
  ControlGrid g(grid.n_steps(), n_shells);
  for (int k = 0; k < grid.n_steps(); ++k) g[k] = f.at(k, n_shells);
  return g;
}

// ---------------------------------------------------------------------------
// CSV trajectories: header t,shell,re,im; one row per time and shell.

namespace detail {

inline void append_double(std::string& out, double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw InputError(where + ": cannot parse number \"" + std::string(s) + "\"");
  return x;
}

}  // namespace detail

/// Shortest round-trip decimal form; independent of the C/C++ locale.
inline std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "t,shell,re,im\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const ShellState& u = traj.states[k];
    for (Eigen::Index n = 0; n < u.size(); ++n) {
      detail::append_double(out, traj.grid.time(static_cast<int>(k)));
      out += ',';
      out += std::to_string(n + 1);
      out += ',';
      detail::append_double(out, u(n).real());
      out += ',';
      detail::append_double(out, u(n).imag());
      out += '\n';
    }
  }
  return out;
}

/// Control rows use the left grid times t_0..t_{N-1}.
inline std::string control_csv(const ControlGrid& g, const TimeGrid& grid) {
  std::string out = "t,shell,re,im\n";
  for (int k = 0; k < g.n_steps(); ++k) {
    for (Eigen::Index n = 0; n < g[k].size(); ++n) {
      detail::append_double(out, grid.time(k));
      out += ',';
      out += std::to_string(n + 1);
      out += ',';
      detail::append_double(out, g[k](n).real());
      out += ',';
      detail::append_double(out, g[k](n).imag());
      out += '\n';
    }
  }
  return out;
}

/// Reads rows back into states t_0..t_N; times must sit on the grid.
inline std::vector<ShellState> parse_trajectory_csv(std::string_view text, int n_shells,
                                                    const TimeGrid& grid,
                                                    const std::string& where = "csv") {
  const int rows_expected = (grid.n_steps() + 1) * n_shells;
  std::vector<ShellState> states(static_cast<std::size_t>(grid.n_steps()) + 1,
                                 ShellState::Zero(n_shells));
  std::vector<char> seen(static_cast<std::size_t>(rows_expected), 0);
  std::size_t pos = 0;
  int line_no = 0, rows = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != "t,shell,re,im")
        throw InputError(where + ": header must be t,shell,re,im");
      continue;
    }
    if (line.empty()) continue;
    std::string_view fields[4];
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const std::size_t comma = f < 3 ? line.find(',', start) : line.size();
      if (comma == std::string_view::npos)
        throw InputError(where + ": line " + std::to_string(line_no) + " has too few fields");
      fields[f] = line.substr(start, comma - start);
      start = comma + 1;
    }
    if (fields[3].find(',') != std::string_view::npos)
      throw InputError(where + ": line " + std::to_string(line_no) + " has too many fields");
    const std::string lw = where + ": line " + std::to_string(line_no);
    const double t = detail::parse_double(fields[0], lw);
    const double shell = detail::parse_double(fields[1], lw);
    const long long k = std::llround(t / grid.dt());
    if (k < 0 || k > grid.n_steps() || std::abs(grid.time(static_cast<int>(k)) - t) > 1e-9 * std::max(1.0, grid.t_end()))
      throw InputError(lw + ": time " + std::string(fields[0]) + " is not on the grid");
    if (shell != std::floor(shell) || shell < 1 || shell > n_shells)
      throw InputError(lw + ": shell index out of range");
    const int n = static_cast<int>(shell);
    const std::size_t idx = static_cast<std::size_t>(k * n_shells + (n - 1));
    if (seen[idx]) throw InputError(lw + ": duplicate (t, shell) row");
    seen[idx] = 1;
    states[static_cast<std::size_t>(k)](n - 1) =
        cplx{detail::parse_double(fields[2], lw), detail::parse_double(fields[3], lw)};
    ++rows;
  }
  if (rows != rows_expected)
    throw InputError(where + ": expected " + std::to_string(rows_expected) + " rows, got " +
                     std::to_string(rows));
  return states;
}

// ---------------------------------------------------------------------------
// Output files

/// Write to a sibling temporary file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " +
                          ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

/// Output directory: the environment override wins over the config.
inline std::filesystem::path output_dir(const OutputSpec& o) {
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0')
    return env;
  return o.dir;
}

struct OutputBundle {
  std::filesystem::path trajectory;  // empty when no trajectory was produced
  std::filesystem::path control;     // empty when no control was produced
  std::filesystem::path report;
};

/// The report carries the resolved config echo.
inline OutputBundle emit_outputs(const OutputSpec& spec, const Trajectory* traj,
                                 const Json& report) {
  const std::filesystem::path dir = output_dir(spec);
  OutputBundle b;
  if (traj != nullptr) {
    b.trajectory = dir / spec.trajectory;
    write_file_atomic(b.trajectory, trajectory_csv(*traj));
    if (traj->applied_control) {
      b.control = dir / spec.control;
      write_file_atomic(b.control, control_csv(*traj->applied_control, traj->grid));
    }
  }
  b.report = dir / spec.report;
  write_file_atomic(b.report, report.dump(2) + "\n");
  return b;
}

}  // namespace sabra

#endif  // SABRA_IO_HPP
