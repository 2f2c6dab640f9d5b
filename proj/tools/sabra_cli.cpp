// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

// sabra <simulate|optimize|feedback|check|spectrum> <config.json>
//
// Exit status: 0 ok, 1 invalid input or I/O failure, 2 blow-up, 3 failed check.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sabra/io.hpp"
#include "sabra/run.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kBlowUp = 2;
constexpr int kCheckFailed = 3;

void report_error(const char* kind, const std::string& message, int status,
                  const sabra::Json& extra = sabra::Json::object()) {
  sabra::Json j = {{"error", kind}, {"message", message}, {"exit", status}};
  for (const auto& [key, value] : extra.items()) j[key] = value;
  std::cerr << j.dump() << "\n";
}

void print_resolved(const sabra::RunConfig& cfg) {
  const auto& p = cfg.params;
  std::printf("model n_shells=%d k0=%.17g lambda=%.17g a=%.17g b=%.17g c=%.17g nu=%.17g\n",
              p.n_shells(), p.k0(), p.lambda(), p.a(), p.b(), p.c(), p.nu());
  std::printf("grid t_end=%.17g dt=%.17g steps=%d scheme=%s seed=%llu\n", cfg.grid.t_end(),
              cfg.grid.dt(), cfg.grid.n_steps(), std::string(sabra::to_string(cfg.scheme)).c_str(),
              static_cast<unsigned long long>(cfg.seed));
  if (!cfg.defaulted.empty()) {
    std::string list;
    for (const auto& d : cfg.defaulted) list += (list.empty() ? "" : ", ") + d;
    std::printf("defaults applied: %s\n", list.c_str());
  }
}

int execute(sabra::TaskKind requested, const std::string& config_path) {
  using sabra::TaskKind;
  sabra::RunConfig cfg = sabra::parse_config_text(sabra::read_text_file(config_path));
  // optimize and feedback read their block from the config; the other
  // subcommands run on any config.
  if (requested == TaskKind::kOptimize || requested == TaskKind::kFeedback) {
    if (cfg.task != requested)
      throw sabra::InputError("config.task: subcommand " +
                              std::string(sabra::to_string(requested)) +
                              " needs a task." + std::string(sabra::to_string(requested)) +
                              " block");
  } else {
    cfg.task = requested;
  }
  print_resolved(cfg);
  std::cout.flush();

  const sabra::RunResult result =
      sabra::run(cfg, std::filesystem::path(config_path).parent_path());
  for (const auto& line : result.lines) std::printf("%s\n", line.c_str());
  const sabra::OutputBundle out = sabra::emit_outputs(
      cfg.output, result.trajectory ? &*result.trajectory : nullptr, result.report);
  if (!out.trajectory.empty()) std::printf("wrote %s\n", out.trajectory.string().c_str());
  if (!out.control.empty()) std::printf("wrote %s\n", out.control.string().c_str());
  std::printf("wrote %s\n", out.report.string().c_str());

  if (result.check_failed) {
    sabra::Json failed = sabra::Json::array();
    for (const auto& s : result.report["check"]["suites"])
      if (!s["passed"].get<bool>()) failed.push_back(s["name"]);
    report_error("check_failed", "one or more property suites failed", kCheckFailed,
                 {{"failed_suites", failed}});
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sabra shell model: simulation, adjoint optimal control, constrained feedback"};
  app.require_subcommand(1);
  std::string config_path;
  struct Entry {
    const char* name;
    const char* help;
    sabra::TaskKind kind;
  };
  const Entry entries[] = {
      {"simulate", "Integrate the model and write the trajectory", sabra::TaskKind::kSimulate},
      {"optimize", "Gradient descent on J1 or J2 with adjoint gradients",
       sabra::TaskKind::kOptimize},
      {"feedback", "Closed-loop run with a constraint-preserving law",
       sabra::TaskKind::kFeedback},
      {"check", "Run the property suites and print one line per property",
       sabra::TaskKind::kCheck},
      {"spectrum", "Time-averaged per-shell energy table", sabra::TaskKind::kSpectrum},
  };
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("config", config_path, "JSON run configuration")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what(), kInvalid);
    return kInvalid;
  }

  sabra::TaskKind requested = sabra::TaskKind::kSimulate;
  for (const Entry& e : entries)
    if (app.got_subcommand(e.name)) requested = e.kind;

  try {
    return execute(requested, config_path);
  } catch (const sabra::InputError& e) {
    report_error("validation", e.what(), kInvalid);
    return kInvalid;
  } catch (const sabra::IoError& e) {
    report_error("io", e.what(), kInvalid);
    return kInvalid;
  } catch (const sabra::BlowUpError& e) {
    report_error("blow_up", e.what(), kBlowUp, {{"step", e.step()}});
    return kBlowUp;
  } catch (const std::exception& e) {
    report_error("internal", e.what(), kInvalid);
    return kInvalid;
  }
}
