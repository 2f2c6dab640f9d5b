// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#include <clocale>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "sabra/io.hpp"
#include "sabra/run.hpp"
#include "test_util.hpp"

namespace sabra {
namespace {

namespace fs = std::filesystem;
using testing::random_state;

const char* kMinimal =
    R"({"model": {"n_shells": 6}, "grid": {"t_end": 1, "dt": 0.01}, "task": {"simulate": {}}})";

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

Json minimal_with(const char* pointer, Json value) {
  Json j = Json::parse(kMinimal);
  j[nlohmann::ordered_json::json_pointer(pointer)] = std::move(value);
  return j;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sabra_test_io_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(ParseConfig, MinimalFillsAndEchoesDefaults) {
  const RunConfig c = parse_config_text(kMinimal);
  EXPECT_EQ(c.params.n_shells(), 6);
  EXPECT_EQ(c.params.a(), 1.0);
  EXPECT_EQ(c.params.b(), -0.5);
  EXPECT_EQ(c.params.c(), -0.5);
  EXPECT_EQ(c.params.lambda(), 2.0);
  EXPECT_EQ(c.params.k0(), 1.0);
  EXPECT_EQ(c.params.nu(), 0.01);
  EXPECT_EQ(c.scheme, Scheme::kSemiImplicitEuler);
  EXPECT_EQ(c.task, TaskKind::kSimulate);

  const Json echo = emit_config(c);
  EXPECT_EQ(echo["model"]["a"], 1.0);
  EXPECT_EQ(echo["model"]["b"], -0.5);
  EXPECT_EQ(echo["model"]["c"], -0.5);
  EXPECT_EQ(echo["model"]["lambda"], 2.0);
  EXPECT_EQ(echo["model"]["k0"], 1.0);
  EXPECT_EQ(echo["model"]["nu"], 0.01);
  EXPECT_EQ(echo["scheme"], "semi-implicit-euler");
  for (const char* key : {"model.k0", "model.lambda", "model.a", "model.b", "model.c",
                          "model.nu", "scheme"})
    EXPECT_NE(std::find(c.defaulted.begin(), c.defaulted.end(), key), c.defaulted.end())
        << key;
}

TEST(ParseConfig, ClosureViolationIsNamed) {
  const Json j = minimal_with("/model", {{"n_shells", 6}, {"a", 1.0}, {"b", -0.5}, {"c", 0.0}});
  EXPECT_NE(error_of(j.dump()).find("a+b+c=0"), std::string::npos);
}

TEST(ParseConfig, CIsComputedWhenOmitted) {
  const Json j = minimal_with("/model", {{"n_shells", 6}, {"a", 2.0}, {"b", -0.75}});
  EXPECT_EQ(parse_config(j).params.c(), -1.25);
}

TEST(ParseConfig, NamedRangeErrors) {
  struct Case {
    const char* pointer;
    Json value;
    const char* needle;
  };
  const Json feedback = {{"feedback", {{"law", "penalty"},
                                       {"constraint", {{"kind", "helicity_ball"}, {"rho", 1.0}}},
                                       {"mask", Json::array()}}}};
  const Case cases[] = {
      {"/model/lambda", 1.0, "lambda"},
      {"/model/nu", -1e-3, "nu"},
      {"/model/n_shells", 0, "n_shells"},
      {"/model/k0", 0.0, "k0"},
      {"/grid/dt", 0.3, "dt"},
      {"/grid/t_end", -1.0, "t_end"},
      {"/task", {{"optimize", {{"cost", "J2"}, {"beta", 0.0}}}}, "beta"},
      {"/task", {{"feedback", {{"constraint", {{"rho", 0.0}}}}}}, "rho"},
      {"/task", feedback, "mask"},
      {"/task", {{"feedback", {{"law", "penalty"}, {"constraint", {{"rho", 1.0}}},
                               {"mask", {0}}}}}, "mask"},
      {"/task", {{"feedback", {{"law", "penalty"}, {"constraint", {{"rho", 1.0}}},
                               {"penalty_lambda", -1.0}}}}, "penalty_lambda"},
      {"/scheme", "forward-euler", "scheme"},
      {"/initial", {{"kind", "explicit"}, {"values", {1, 2}}}, "initial.values"},
      {"/forcing", {{"kind", "per_shell"}, {"values", {1, 2, 3}}}, "forcing.values"},
      {"/seed", -1, "seed"},
  };
  for (const Case& c : cases) {
    const std::string err = error_of(minimal_with(c.pointer, c.value).dump());
    EXPECT_NE(err.find(c.needle), std::string::npos) << c.pointer << " -> \"" << err << "\"";
  }
}

TEST(ParseConfig, MalformedJsonReportsPosition) {
  const std::string err = error_of(R"({"model": {"n_shells": 6,}})");
  EXPECT_NE(err.find("byte 26"), std::string::npos) << err;
}

TEST(ParseConfig, UnknownKeysRejectedAtEveryLevel) {
  for (const char* pointer :
       {"/extra", "/model/viscosity", "/grid/steps", "/output/format", "/initial/decay"}) {
    const std::string err = error_of(minimal_with(pointer, 1).dump());
    EXPECT_NE(err.find("unknown key"), std::string::npos) << pointer << ": " << err;
  }
  const Json opt = minimal_with(
      "/task", {{"optimize", {{"cost", "J1"}, {"optimizer", {{"momentum", 0.9}}}}}});
  EXPECT_NE(error_of(opt.dump()).find("unknown key"), std::string::npos);
  const Json j1_beta = minimal_with("/task", {{"optimize", {{"cost", "J1"}, {"beta", 1.0}}}});
  EXPECT_NE(error_of(j1_beta.dump()).find("unknown key \"beta\""), std::string::npos);
  EXPECT_NE(error_of(minimal_with("/task", "relax").dump()).find("unknown task"),
            std::string::npos);
}

TEST(ParseConfig, TaskShorthandAndNullBody) {
  EXPECT_EQ(parse_config(minimal_with("/task", "check")).task, TaskKind::kCheck);
  EXPECT_EQ(parse_config(minimal_with("/task", {{"spectrum", nullptr}})).task,
            TaskKind::kSpectrum);
}

TEST(ParseConfig, OptimizeNeedsImplicitEuler) {
  Json j = minimal_with("/task", {{"optimize", {{"cost", "J1"}}}});
  j["scheme"] = "integrating-factor-rk4";
  EXPECT_NE(error_of(j.dump()).find("semi-implicit-euler"), std::string::npos);
}

// Hand-rolled generator over the config space.
Json random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto coin = [&] { return pick(rng) % 2 == 0; };
  auto cnum = [&]() -> Json {
    if (coin()) return unit(rng) - 0.5;
    return Json::array({unit(rng) - 0.5, unit(rng) - 0.5});
  };
  const int n = 1 + pick(rng) % 9;
  Json j;
  j["model"] = {{"n_shells", n}};
  if (coin()) j["model"]["nu"] = unit(rng) * 0.1;
  if (coin()) j["model"]["lambda"] = 1.1 + unit(rng);
  if (coin()) {
    const double a = unit(rng) + 0.5, b = -unit(rng);
    j["model"]["a"] = a;
    j["model"]["b"] = b;
    if (coin()) j["model"]["c"] = -a - b;
  }
  const int steps = 1 + pick(rng) % 200;
  const double dt = 0.001 * (1 + pick(rng) % 50);
  j["grid"] = {{"t_end", steps * dt}, {"dt", dt}};
  if (coin()) j["scheme"] = coin() ? "semi-implicit-euler" : "integrating-factor-rk4";
  if (coin()) j["seed"] = pick(rng);
  auto source = [&]() -> Json {
    switch (pick(rng) % 3) {
      case 0: return {{"kind", "zero"}};
      case 1: return {{"kind", "constant"}, {"value", cnum()}};
      default: {
        Json v = Json::array();
        for (int i = 0; i < n; ++i) v.push_back(cnum());
        return {{"kind", "per_shell"}, {"values", v}};
      }
    }
  };
  auto initial = [&]() -> Json {
    if (coin()) {
      Json r = {{"kind", "random"}, {"scale", unit(rng)}};
      if (coin()) r["seed"] = pick(rng);
      return r;
    }
    Json v = Json::array();
    for (int i = 0; i < n; ++i) v.push_back(cnum());
    return {{"kind", "explicit"}, {"values", v}};
  };
  if (coin()) j["initial"] = initial();
  if (coin()) j["forcing"] = source();
  switch (pick(rng) % 5) {
    case 0: j["task"] = "simulate"; break;
    case 1: j["task"] = {{"spectrum", Json::object()}}; break;
    case 2: {
      j["scheme"] = "semi-implicit-euler";
      Json o = {{"cost", coin() ? "J1" : "J2"}};
      if (o["cost"] == "J2") {
        o["beta"] = 1e-4 + unit(rng);
        o["terminal_penalty"] = coin();
        o["target"] = coin() ? Json{{"kind", "twin"}, {"control", source()}}
                             : Json{{"kind", "free_flow"}, {"initial", initial()}};
      }
      if (coin()) o["optimizer"] = {{"max_iters", pick(rng) % 100}, {"shrink", 0.3}};
      j["task"] = {{"optimize", o}};
      break;
    }
    case 3: {
      Json f = {{"law", "enstrophy"}, {"constraint", {{"rho", 0.1 + unit(rng)}}}};
      if (coin()) f["band"] = unit(rng) * 0.01;
      if (coin()) f["complex_pairing"] = coin();
      j["task"] = {{"feedback", f}};
      break;
    }
    default: {
      Json mask = Json::array();
      for (int s = 1; s <= n; ++s)
        if (coin() || s == 1) mask.push_back(s);
      j["task"] = {{"feedback",
                    {{"law", "penalty"},
                     {"constraint", {{"kind", coin() ? "helicity_ball" : "enstrophy_ball"},
                                     {"rho", 0.1 + unit(rng)}}},
                     {"mask", mask},
                     {"penalty_lambda", 1e-3 + unit(rng)}}}};
    }
  }
  if (coin()) j["output"] = {{"dir", "d" + std::to_string(pick(rng))}};
  return j;
}

TEST(ParseConfig, EmitParseFixpointProperty) {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 500; ++trial) {
    const Json x = random_config(rng);
    const RunConfig c1 = parse_config(x);
    const Json e1 = emit_config(c1);
    const RunConfig c2 = parse_config(e1);
    const Json e2 = emit_config(c2);
    ASSERT_EQ(e1.dump(), e2.dump()) << x.dump();
    // Text form too: doubles survive dump/parse bit-exactly.
    ASSERT_EQ(emit_config(parse_config_text(e1.dump())).dump(), e1.dump());
    EXPECT_EQ(c1.params.c(), c2.params.c());
    EXPECT_EQ(c1.grid.n_steps(), c2.grid.n_steps());
  }
}

TEST(ParseConfig, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(fs::path(SABRA_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    const RunConfig c = parse_config_text(read_text_file(entry.path()));
    EXPECT_EQ(emit_config(parse_config(emit_config(c))).dump(), emit_config(c).dump())
        << entry.path();
  }
}

Trajectory zero_trajectory(int steps, int shells) {
  Trajectory t{TimeGrid::make(steps * 0.5, 0.5), {}, std::nullopt};
  t.states.assign(static_cast<std::size_t>(steps) + 1, ShellState::Zero(shells));
  return t;
}

TEST(TrajectoryCsv, ZeroTwoStepOneShell) {
  const std::string csv = trajectory_csv(zero_trajectory(2, 1));
  EXPECT_EQ(csv, "t,shell,re,im\n0,1,0,0\n0.5,1,0,0\n1,1,0,0\n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(TrajectoryCsv, RoundTripIsBitExact) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::uint64_t> bits;
  auto any_finite = [&] {
    for (;;) {
      const std::uint64_t b = bits(rng);
      double x;
      std::memcpy(&x, &b, sizeof x);
      if (std::isfinite(x)) return x;
    }
  };
  for (int trial = 0; trial < 20; ++trial) {
    const int shells = 1 + trial % 7, steps = 1 + trial % 5;
    Trajectory t{TimeGrid::make(steps * 0.01, 0.01), {}, std::nullopt};
    for (int k = 0; k <= steps; ++k) {
      ShellState u = random_state(shells, rng);
      if (trial % 2 == 1)
        for (int n = 0; n < shells; ++n) u(n) = cplx{any_finite(), any_finite()};
      t.states.push_back(u);
    }
    t.states[0](0) = cplx{-0.0, 5e-324};
    const auto back = parse_trajectory_csv(trajectory_csv(t), shells, t.grid);
    ASSERT_EQ(back.size(), t.states.size());
    for (std::size_t k = 0; k < back.size(); ++k)
      for (int n = 0; n < shells; ++n) {
        EXPECT_EQ(std::memcmp(&back[k](n), &t.states[k](n), sizeof(cplx)), 0);
      }
  }
}

TEST(TrajectoryCsv, IndependentOfCLocale) {
  const char* old = std::setlocale(LC_ALL, nullptr);
  const std::string saved = old ? old : "C";
  bool switched = false;
  for (const char* name : {"de_DE.UTF-8", "fr_FR.UTF-8", "de_DE", "C.UTF-8"})
    if (std::setlocale(LC_ALL, name)) {
      switched = true;
      break;
    }
  Trajectory t = zero_trajectory(1, 2);
  t.states[1](1) = cplx{1.25, -3.5e-7};
  const std::string csv = trajectory_csv(t);
  std::setlocale(LC_ALL, saved.c_str());
  EXPECT_NE(csv.find("0.5,2,1.25,-3.5e-07"), std::string::npos) << csv;
  if (!switched) GTEST_SKIP() << "no alternative locale installed";
}

TEST(TrajectoryCsv, RejectsMalformedInput) {
  const TimeGrid grid = TimeGrid::make(1.0, 0.5);
  const std::string good = "t,shell,re,im\n0,1,0,0\n0.5,1,0,0\n1,1,0,0\n";
  EXPECT_NO_THROW(parse_trajectory_csv(good, 1, grid));
  EXPECT_THROW(parse_trajectory_csv("time,shell,re,im\n", 1, grid), InputError);
  EXPECT_THROW(parse_trajectory_csv("t,shell,re,im\n0,1,0,0\n", 1, grid), InputError);
  EXPECT_THROW(parse_trajectory_csv(good + "1,1,0,0\n", 1, grid), InputError);
  EXPECT_THROW(parse_trajectory_csv("t,shell,re,im\n0,1,0,0\n0.25,1,0,0\n1,1,0,0\n", 1, grid),
               InputError);
  EXPECT_THROW(parse_trajectory_csv("t,shell,re,im\n0,1,0,0\n0.5,2,0,0\n1,1,0,0\n", 1, grid),
               InputError);
  EXPECT_THROW(parse_trajectory_csv("t,shell,re,im\n0,1,0,x\n0.5,1,0,0\n1,1,0,0\n", 1, grid),
               InputError);
  EXPECT_THROW(parse_trajectory_csv("t,shell,re,im\n0,1,0,0,0\n0.5,1,0,0\n1,1,0,0\n", 1, grid),
               InputError);
}

TEST(Output, AtomicWriteCreatesDirectoriesAndLeavesNoTemp) {
  const fs::path dir = scratch_dir("atomic");
  const fs::path file = dir / "a" / "b.txt";
  write_file_atomic(file, "first");
  write_file_atomic(file, "second");
  EXPECT_EQ(read_text_file(file), "second");
  for (const auto& e : fs::recursive_directory_iterator(dir))
    EXPECT_NE(e.path().extension(), ".tmp") << e.path();
  fs::remove_all(dir);
}

TEST(Output, FailuresCarryThePath) {
  const fs::path dir = scratch_dir("blocked");
  write_file_atomic(dir / "file", "x");
  try {
    write_file_atomic(dir / "file" / "child.txt", "y");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("file"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_text_file(dir / "missing.json"), IoError);
  fs::remove_all(dir);
}

TEST(Output, EnvironmentOverridesDirectory) {
  const fs::path dir = scratch_dir("env");
  OutputSpec spec;
  spec.dir = (dir / "from_config").string();
  ::setenv(kOutputDirEnv, (dir / "from_env").c_str(), 1);
  const Trajectory t = zero_trajectory(1, 1);
  const OutputBundle b = emit_outputs(spec, &t, Json{{"ok", true}});
  ::unsetenv(kOutputDirEnv);
  EXPECT_EQ(b.report, dir / "from_env" / "report.json");
  EXPECT_TRUE(fs::exists(dir / "from_env" / "trajectory.csv"));
  EXPECT_FALSE(fs::exists(dir / "from_config"));
  EXPECT_TRUE(b.control.empty());
  fs::remove_all(dir);
}

TEST(Run, SimulateMatchesLibraryAndIsReproducible) {
  const RunConfig c = parse_config_text(
      R"({"model": {"n_shells": 5, "nu": 0.02}, "grid": {"t_end": 0.5, "dt": 0.01},
          "seed": 9, "initial": {"kind": "random", "scale": 0.5},
          "forcing": {"kind": "constant", "value": [0.1, 0.0]}, "task": "simulate"})");
  const RunResult a = run(c), b = run(c);
  ASSERT_TRUE(a.trajectory);
  const Trajectory direct = simulate(c.params, random_initial_state(c.params, 9, 0.5),
                                     ForcingSpec::constant({0.1, 0.0}), c.grid,
                                     Scheme::kSemiImplicitEuler);
  EXPECT_EQ(a.trajectory->states, direct.states);
  EXPECT_EQ(a.report.dump(), b.report.dump());
  EXPECT_EQ(trajectory_csv(*a.trajectory), trajectory_csv(*b.trajectory));
  // The echo re-runs to the same result; only the defaults list empties.
  RunResult c2 = run(parse_config(a.report["config"]));
  EXPECT_TRUE(c2.report["defaults_applied"].empty());
  c2.report["defaults_applied"] = a.report["defaults_applied"];
  EXPECT_EQ(c2.report.dump(), a.report.dump());
  EXPECT_EQ(a.report["diagnostics"]["energy"].size(), 51u);
}

TEST(Run, TwinOptimizeReportsMonotoneDecrease) {
  const RunConfig c =
      parse_config_text(read_text_file(fs::path(SABRA_SOURCE_DIR) / "configs" / "twin.json"));
  const RunResult r = run(c);
  const Json& o = r.report["optimization"];
  EXPECT_TRUE(o["converged"].get<bool>());
  EXPECT_TRUE(o["cost_monotone"].get<bool>());
  const auto cost = o["cost"].get<std::vector<double>>();
  for (std::size_t i = 1; i < cost.size(); ++i) EXPECT_LE(cost[i], cost[i - 1]);
  EXPECT_LT(o["tracking_error_optimized"].get<double>(),
            0.1 * o["tracking_error_uncontrolled"].get<double>());
  ASSERT_TRUE(r.trajectory && r.trajectory->applied_control);
}

TEST(Run, CsvTargetMatchesTwinTarget) {
  RunConfig c =
      parse_config_text(read_text_file(fs::path(SABRA_SOURCE_DIR) / "configs" / "twin.json"));
  c.optimize.optimizer.max_iters = 5;
  const RunResult twin = run(c);
  // Write the twin target to CSV and point a second run at it.
  const ShellState u0 = make_initial_state(c.params, c.initial, c.seed);
  const Trajectory target =
      simulate(c.params, u0, make_forcing(c.forcing),
               make_control(c.optimize.target.control, c.grid, c.params.n_shells()), c.grid,
               Scheme::kSemiImplicitEuler);
  const fs::path dir = scratch_dir("csv_target");
  write_file_atomic(dir / "target.csv", trajectory_csv(target));
  c.optimize.target.kind = TargetSpec::Kind::kCsv;
  c.optimize.target.path = "target.csv";
  const RunResult from_csv = run(c, dir);
  EXPECT_EQ(from_csv.report["optimization"]["cost"], twin.report["optimization"]["cost"]);
  fs::remove_all(dir);
}

TEST(Run, FeedbackAndSpectrum) {
  const RunConfig f = parse_config_text(
      R"({"model": {"n_shells": 6, "nu": 0.01}, "grid": {"t_end": 0.5, "dt": 0.001},
          "initial": {"kind": "explicit", "values": [0.2, 0, 0, 0, 0, 0]},
          "forcing": {"kind": "per_shell", "values": [2.0, [0, 2.0], 0, 0, 0, 0]},
          "task": {"feedback": {"constraint": {"rho": 0.5}}}})");
  const RunResult r = run(f);
  const Json& inv = r.report["invariance"];
  EXPECT_EQ(inv["max_excess"].get<double>(), 0.0);
  EXPECT_GT(inv["uncontrolled_max_excess"].get<double>(), 0.0);

  RunConfig s = f;
  s.task = TaskKind::kSpectrum;
  const RunResult sp = run(s);
  ASSERT_EQ(sp.report["spectrum"].size(), 6u);
  EXPECT_FALSE(sp.trajectory.has_value());
  EXPECT_EQ(sp.report["spectrum"][0]["k"], 2.0);
}

TEST(Run, InfeasibleFeedbackStartIsInputError) {
  const RunConfig f = parse_config_text(
      R"({"model": {"n_shells": 4}, "grid": {"t_end": 0.1, "dt": 0.01},
          "initial": {"kind": "explicit", "values": [5, 0, 0, 0]},
          "task": {"feedback": {"constraint": {"rho": 1.0}}}})");
  EXPECT_THROW(run(f), InputError);
}

}  // namespace
}  // namespace sabra
