// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_SELFCHECK_HPP
#define SABRA_SELFCHECK_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "sabra/adjoint.hpp"
#include "sabra/constraint.hpp"
#include "sabra/integrator.hpp"
#include "sabra/optimize.hpp"
#include "sabra/shell_core.hpp"

// Property suites with pinned scenarios. `sabra check` and the acceptance
// binary both run these.

namespace sabra::check {

enum class Relation { kAtMost, kAtLeast, kWithin };

struct Property {
  std::string name;
  double value = 0.0;
  double limit = 0.0;  // kWithin: |value - target| <= limit
  double target = 0.0;
  Relation relation = Relation::kAtMost;
  bool passed = false;
};

struct SuiteResult {
  int id = 0;
  std::string name;
  std::vector<Property> properties;
  double seconds = 0.0;
  double budget_seconds = 0.0;

  bool within_budget() const { return seconds <= budget_seconds; }
  bool passed() const {
    if (!within_budget()) return false;
    for (const auto& p : properties)
      if (!p.passed) return false;
    return !properties.empty();
  }
};

inline constexpr int kSuiteCount = 8;

namespace detail {

class Recorder {
 public:
  explicit Recorder(SuiteResult& out) : out_(out) {}

  void at_most(std::string name, double value, double limit) {
    add({std::move(name), value, limit, 0.0, Relation::kAtMost, value <= limit});
  }
  void at_least(std::string name, double value, double limit) {
    add({std::move(name), value, limit, 0.0, Relation::kAtLeast, value >= limit});
  }
  void within(std::string name, double value, double target, double limit) {
    add({std::move(name), value, limit, target, Relation::kWithin,
         std::abs(value - target) <= limit});
  }

 private:
  void add(Property p) {
    // NaN never passes.
    if (std::isnan(p.value)) p.passed = false;
    out_.properties.push_back(std::move(p));
  }
  SuiteResult& out_;
};

inline ShellState gaussian_state(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  ShellState u(n);
  for (int i = 0; i < n; ++i) u(i) = scale * cplx{gauss(rng), gauss(rng)};
  return u;
}

inline ControlGrid gaussian_control(int steps, int n, std::mt19937_64& rng,
                                    double scale = 1.0) {
  ControlGrid g(steps, n);
  for (int k = 0; k < steps; ++k) g[k] = gaussian_state(n, rng, scale);
  return g;
}

/// Real 2N x 2N matrix of a real-linear map on C^N in (Re, Im) coordinates.
template <class Map>
Eigen::MatrixXd real_matrix(int n, Map&& map) {
  Eigen::MatrixXd M(2 * n, 2 * n);
  for (int j = 0; j < 2 * n; ++j) {
    ShellState e = ShellState::Zero(n);
    e(j % n) = j < n ? cplx{1.0, 0.0} : cplx{0.0, 1.0};
    const ShellState col = map(e);
    M.col(j).head(n) = col.real();
    M.col(j).tail(n) = col.imag();
  }
  return M;
}

inline ShellState scaled_into(const ShellParams& p, const ConstraintSet& K, ShellState y,
                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double v = K.value(p, y);
  if (v > K.rho()) y *= K.rho() / v * unit(rng);
  return y;
}

inline bool monotone_non_increasing(const std::vector<double>& x) {
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[i - 1]) return false;
  return true;
}

// ---------------------------------------------------------------------------

inline void operator_suite(Recorder& rec) {
  const auto p = ShellParams::make(8);
  std::mt19937_64 rng(101);
  double orth = 0.0, r1 = 0.0, r2 = 0.0, r3 = 0.0, transpose = 0.0;
  for (int s = 0; s < 1000; ++s) {
    const ShellState u = gaussian_state(8, rng), v = gaussian_state(8, rng);
    const double vV = norm(p, v, NormSpec::enstrophy());
    orth = std::max(orth, std::abs(real_inner(bilinear_B(p, u, v), v)) /
                              (u.norm() * vV * v.norm()));
    r1 = std::max(r1, bilinear_B(p, u, v).norm() / (p.c1() * u.norm() * vV));
    r2 = std::max(r2, bilinear_B(p, v, u).norm() / (p.c2() * u.norm() * vV));
    r3 = std::max(r3, norm(p, bilinear_B(p, u, v), NormSpec::enstrophy()) /
                          (p.c3() * u.norm() * apply_A_power(p, v, 1.0).norm()));
    const Eigen::MatrixXd L =
        real_matrix(8, [&](const ShellState& x) { return linearize_B(p, u, x); });
    const Eigen::MatrixXd La =
        real_matrix(8, [&](const ShellState& x) { return adjoint_linearize_B(p, u, x); });
    transpose = std::max(transpose, (L.transpose() - La).cwiseAbs().maxCoeff() /
                                        std::max(1.0, L.cwiseAbs().maxCoeff()));
  }
  rec.at_most("energy_orthogonality", orth, 1e-12);
  rec.at_most("bound_c1_ratio", r1, 1.0 + 1e-12);
  rec.at_most("bound_c2_ratio", r2, 1.0 + 1e-12);
  rec.at_most("bound_c3_ratio", r3, 1.0 + 1e-12);
  rec.at_most("adjoint_transpose", transpose, 1e-12);
}

inline void conservation_suite(Recorder& rec) {
  const auto p = ShellParams::make(20).with_nu(0.0);
  const ShellState u0 = random_initial_state(p, 42, 0.01);
  auto run = [&](double dt) {
    return simulate(p, u0, ForcingSpec::zero(), TimeGrid::make(1.0, dt),
                    Scheme::kIntegratingFactorRK4);
  };
  const Trajectory fine = run(1e-4);
  const double e0 = u0.squaredNorm();
  double drift = 0.0;
  for (const auto& u : fine.states) drift = std::max(drift, std::abs(u.squaredNorm() - e0) / e0);
  rec.at_most("rk4_energy_drift", drift, 1e-8);

  const ShellState a = run(2e-3).final_state(), b = run(1e-3).final_state(),
                   c = run(5e-4).final_state();
  rec.within("rk4_order", std::log2((a - b).norm() / (b - c).norm()), 4.0, 0.3);

  // Largest relative energy increase over single steps; zero up to rounding.
  const auto pv = ShellParams::make(20).with_nu(0.01);
  double increase = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ShellState v0 = random_initial_state(pv, seed, 1.0);
    for (double dt : {1.0, 0.1, 0.01}) {
      const Trajectory t = simulate(pv, v0, ForcingSpec::zero(), TimeGrid::make(10.0, dt),
                                    Scheme::kSemiImplicitEuler);
      for (int k = 1; k <= t.grid.n_steps(); ++k) {
        const double prev = t.at(k - 1).squaredNorm();
        if (prev > 0.0) increase = std::max(increase, (t.at(k).squaredNorm() - prev) / prev);
      }
    }
  }
  rec.at_most("euler_energy_increase", increase, 1e-13);
}

inline void duality_suite(Recorder& rec) {
  const auto p = ShellParams::make(6).with_nu(0.02);
  const auto grid = TimeGrid::make(1.0, 0.02);
  const ShellState u0 = random_initial_state(p, 11, 0.8);
  const Trajectory base = simulate(p, u0, ForcingSpec::constant({0.05, 0.02}), grid,
                                   Scheme::kSemiImplicitEuler);
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const ControlGrid h1 = gaussian_control(50, 6, rng);
    const ControlGrid h2 = gaussian_control(50, 6, rng);
    worst = std::max(worst, duality_residual(p, base, h1, h2, Scheme::kSemiImplicitEuler));
  }
  rec.at_most("pairing_defect", worst, 1e-10);
}

inline void gradient_suite(Recorder& rec) {
  const auto p = ShellParams::make(5).with_nu(0.02);
  const auto grid = TimeGrid::make(1.0, 0.025);
  const ShellState u0 = random_initial_state(p, 31, 0.8);
  const ForcingSpec f = ForcingSpec::constant({0.05, 0.02});
  std::mt19937_64 rng(41);
  std::vector<ShellState> desired;
  for (int k = 0; k <= grid.n_steps(); ++k) desired.push_back(gaussian_state(5, rng, 0.3));

  auto worst_error = [&](const CostSpec& spec) {
    const ControlGrid g = gaussian_control(grid.n_steps(), 5, rng, 0.3);
    const CostAndGradient cg = cost_and_gradient(p, spec, g, u0, f, grid);
    auto cost_at = [&](const ControlGrid& x) {
      return evaluate_cost(p, spec, simulate(p, u0, f, x, grid, Scheme::kSemiImplicitEuler),
                           x);
    };
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      ControlGrid d = gaussian_control(grid.n_steps(), 5, rng);
      d = (1.0 / grid_norm(d, grid.dt())) * d;
      const double eps = 1e-5;
      const double fd = (cost_at(g + eps * d) - cost_at(g - eps * d)) / (2 * eps);
      const double ad = grid_inner(cg.gradient, d, grid.dt());
      worst = std::max(worst, std::abs(fd - ad) / std::max(std::abs(fd), std::abs(ad)));
    }
    return worst;
  };
  rec.at_most("j1_relative_error", worst_error(CostSpec::j1()), 1e-6);
  rec.at_most("j2_terminal_relative_error", worst_error(CostSpec::j2(0.5, desired, true)),
              1e-6);
  rec.at_most("j2_running_relative_error", worst_error(CostSpec::j2(0.5, desired, false)),
              1e-6);
}

/// Twin experiment: target from a known control, optimizer from g = 0.
struct TwinScenario {
  ShellParams params = ShellParams::make(6).with_nu(0.01);
  TimeGrid grid = TimeGrid::make(1.0, 0.01);
  ShellState u0;
  ForcingSpec forcing;
  ControlGrid truth_control;
  Trajectory truth;
  double beta = 1e-3;
};

inline TwinScenario twin_scenario() {
  TwinScenario s;
  s.u0 = random_initial_state(s.params, 1, 0.5);
  ShellState fv = ShellState::Zero(6);
  fv(0) = 0.5;
  s.forcing = ForcingSpec::per_shell(fv);
  s.truth_control = ControlGrid(s.grid.n_steps(), 6);
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int k = 0; k < s.grid.n_steps(); ++k) {
    const double t = s.grid.time(k);
    s.truth_control[k](0) = cplx{std::sin(two_pi * t), 0.5};
    s.truth_control[k](1) = cplx{0.3, std::cos(two_pi * t)};
  }
  s.truth = simulate(s.params, s.u0, s.forcing, s.truth_control, s.grid,
                     Scheme::kSemiImplicitEuler);
  return s;
}

inline double tracking_error(const Trajectory& t, const Trajectory& truth) {
  double acc = 0.0;
  for (int k = 1; k <= t.grid.n_steps(); ++k) acc += (t.at(k) - truth.at(k)).squaredNorm();
  return std::sqrt(acc * t.grid.dt());
}

inline void optimality_suite(Recorder& rec) {
  const TwinScenario s = twin_scenario();
  OptimizeConfig cfg;
  cfg.tol_grad = 1e-6;

  const CostSpec j2 = CostSpec::j2(s.beta, s.truth.states, true);
  const OptimizeResult r2 = optimize(s.params, j2, s.u0, s.forcing, s.grid, cfg);
  rec.at_least("j2_converged", r2.report.converged ? 1.0 : 0.0, 1.0);
  rec.at_most("j2_residual",
              optimality_residual(s.params, j2, r2.control, s.u0, s.forcing, s.grid), 1e-5);
  rec.at_least("j2_cost_monotone", monotone_non_increasing(r2.report.cost) ? 1.0 : 0.0, 1.0);
  const Trajectory free = simulate(s.params, s.u0, s.forcing, s.grid, Scheme::kSemiImplicitEuler);
  rec.at_least("twin_error_reduction",
               1.0 - tracking_error(r2.trajectory, s.truth) / tracking_error(free, s.truth),
               0.9);

  const CostSpec j1 = CostSpec::j1();
  const OptimizeResult r1 = optimize(s.params, j1, s.u0, s.forcing, s.grid, cfg);
  rec.at_least("j1_converged", r1.report.converged ? 1.0 : 0.0, 1.0);
  rec.at_most("j1_residual",
              optimality_residual(s.params, j1, r1.control, s.u0, s.forcing, s.grid), 1e-5);
  rec.at_least("j1_cost_monotone", monotone_non_increasing(r1.report.cost) ? 1.0 : 0.0, 1.0);
}

inline void projection_suite(Recorder& rec) {
  const auto p8 = ShellParams::make(8);
  std::mt19937_64 rng(4);
  double idem = 0.0, expand = 0.0;
  for (auto K : {ConstraintSet::enstrophy_ball(1.0), ConstraintSet::helicity_ball(1.0)}) {
    for (int trial = 0; trial < 500; ++trial) {
      // Odd trials: close neighbours just outside K, where the ratio approaches 1.
      ShellState u = gaussian_state(8, rng, 3.0);
      if (trial % 2 == 1) u *= 1.01 * K.rho() / K.value(p8, u);
      const ShellState v = trial % 2 == 0 ? gaussian_state(8, rng, 3.0)
                                          : ShellState(u + gaussian_state(8, rng, 1e-4));
      const ShellState pu = project(p8, u, K), pv = project(p8, v, K);
      idem = std::max(idem, (project(p8, pu, K) - pu).norm() / std::max(1.0, pu.norm()));
      expand = std::max(expand, (pu - pv).norm() / (u - v).norm());
    }
  }
  rec.at_most("idempotence", idem, 1e-12);
  rec.at_most("nonexpansive_ratio", expand, 1.0 + 1e-12);

  // One active shell n: z_n = u_n rho / (k_n^{2m} |u_n|) with m = 1 or 1/2.
  const auto p4 = ShellParams::make(4, 1.0, 2.0);
  double closed = 0.0;
  for (auto K : {ConstraintSet::enstrophy_ball(1.0), ConstraintSet::helicity_ball(1.0)}) {
    for (int n = 1; n <= 4; ++n) {
      ShellState u = ShellState::Zero(4);
      u(n - 1) = cplx{3.0, -4.0} * 10.0;
      const double expected_abs = K.rho() / std::pow(p4.k(n), 4.0 * K.power() / 2.0);
      const ShellState z = project(p4, u, K);
      const cplx expected = u(n - 1) / std::abs(u(n - 1)) * expected_abs;
      closed = std::max(closed, std::abs(z(n - 1) - expected));
      closed = std::max(closed, (z - ShellState::Zero(4)).norm() - std::abs(z(n - 1)));
    }
  }
  rec.at_most("single_mode_closed_form", closed, 1e-12);

  const auto p6 = ShellParams::make(6);
  double shortfall = 0.0;
  for (auto K : {ConstraintSet::enstrophy_ball(1.0), ConstraintSet::helicity_ball(1.0)}) {
    ShellState u = gaussian_state(6, rng, 2.0);
    if (K.contains(p6, u)) u *= 4.0 * K.rho() / K.value(p6, u);
    const double best = (u - project(p6, u, K)).norm();
    for (int s = 0; s < 10000; ++s) {
      const ShellState y = scaled_into(p6, K, gaussian_state(6, rng, 2.0), rng);
      shortfall = std::max(shortfall, (best - (u - y).norm()) / best);
    }
  }
  rec.at_most("brute_force_shortfall", shortfall, 1e-12);
}

/// Forced enstrophy-ball scenario whose uncontrolled run leaves the ball.
struct EnstrophyScenario {
  ShellParams params = ShellParams::make(10).with_nu(1e-3);
  ConstraintSet K = ConstraintSet::enstrophy_ball(1.0);
  ShellState u0;
  ForcingSpec forcing;
  ShellState forcing_value;
  double t_end = 2.0;
};

inline EnstrophyScenario enstrophy_scenario() {
  EnstrophyScenario s;
  const int N = s.params.n_shells();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::acos(-1.0));
  s.u0 = ShellState(N);
  for (int n = 1; n <= N; ++n) s.u0(n - 1) = std::polar(std::pow(s.params.k(n), -4.0), phase(rng));
  s.u0 *= s.K.rho() / norm(s.params, s.u0, NormSpec::enstrophy());
  s.forcing_value = ShellState::Zero(N);
  s.forcing_value(0) = 0.01 * s.u0(0) / std::abs(s.u0(0));
  s.forcing = ForcingSpec::per_shell(s.forcing_value);
  return s;
}

inline void invariance_suite(Recorder& rec) {
  const EnstrophyScenario s = enstrophy_scenario();
  const double rho = s.K.rho();
  const Trajectory ref = simulate(s.params, s.u0, s.forcing, TimeGrid::make(s.t_end, 1e-4),
                                  Scheme::kIntegratingFactorRK4);
  rec.at_least("reference_excess", invariance_report(s.params, ref, s.K).max_excess / rho,
               1e-3);

  std::vector<double> raw;
  ClosedLoopResult fine;
  for (double dt : {4e-4, 2e-4, 1e-4}) {
    ClosedLoopResult r = simulate_closed_loop(s.params, s.u0, s.forcing, EnstrophyLaw{}, s.K,
                                              TimeGrid::make(s.t_end, dt),
                                              Scheme::kIntegratingFactorRK4);
    raw.push_back(r.max_raw_excess / rho);
    if (dt == 1e-4) fine = std::move(r);
  }
  double stored = 0.0;
  for (const auto& u : fine.trajectory.states)
    stored = std::max(stored, norm(s.params, u, NormSpec::enstrophy()) / rho - 1.0);
  rec.at_most("max_excess_stored", std::max(stored, 0.0), 1e-6);
  rec.at_most("max_excess_raw", raw.back(), 1e-6);

  // Observed order per halving; an excess at rounding level counts as converged.
  constexpr double kZero = 1e-14;
  double order = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i] <= kZero) continue;
    order = std::min(order, raw[i - 1] <= kZero ? 0.0 : std::log2(raw[i - 1] / raw[i]));
  }
  rec.at_least("excess_order", order, 1.0);

  // eta = -g must lie in N_K(u) at boundary states met on the run.
  std::mt19937_64 rng(77);
  double worst = std::numeric_limits<double>::infinity();
  const int stride = std::max<int>(1, static_cast<int>(fine.trajectory.states.size()) / 10);
  int sampled = 0;
  for (std::size_t k = 0; k < fine.trajectory.states.size(); k += static_cast<std::size_t>(stride)) {
    ShellState u = fine.trajectory.states[k];
    u *= rho / norm(s.params, u, NormSpec::enstrophy());
    const ShellState g = enstrophy_feedback(s.params, u, s.forcing_value, rho);
    if (g.norm() == 0.0) continue;
    ++sampled;
    for (int j = 0; j < 1000; ++j) {
      const ShellState z = scaled_into(s.params, s.K, gaussian_state(10, rng, 0.5), rng);
      worst = std::min(worst, real_inner(-g, u - z));
    }
  }
  rec.at_least("normal_cone_samples", sampled, 1.0);
  rec.at_least("normal_cone_min", worst, -1e-10);
}

/// Masked helicity-ball scenario for the penalty ladder.
struct PenaltyScenario {
  ShellParams params = ShellParams::make(10).with_nu(1e-2);
  ConstraintSet K = ConstraintSet::helicity_ball(0.5);
  ModeMask mask = ModeMask::make({1, 2, 3}, 10);
  ShellState u0;
  ForcingSpec forcing;
  TimeGrid grid = TimeGrid::make(2.0, 1e-4);
  std::vector<double> ladder{1e-1, 1e-2, 1e-3};
};

inline PenaltyScenario penalty_scenario() {
  PenaltyScenario s;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::acos(-1.0));
  s.u0 = ShellState(10);
  for (int n = 1; n <= 10; ++n) s.u0(n - 1) = std::polar(1.0 / s.params.k(n), phase(rng));
  s.u0 *= 0.9 * s.K.rho() / s.K.value(s.params, s.mask.apply(s.u0));
  ShellState f = ShellState::Zero(10);
  f(0) = cplx{1.0, 0.0};
  f(1) = cplx{0.0, 1.0};
  s.forcing = ForcingSpec::per_shell(f);
  return s;
}

inline void penalty_suite(Recorder& rec) {
  const PenaltyScenario s = penalty_scenario();
  const Trajectory ref = simulate(s.params, s.u0, s.forcing, s.grid,
                                  Scheme::kIntegratingFactorRK4);
  rec.at_least("reference_excess",
               invariance_report(s.params, ref, s.K, s.mask).max_excess / s.K.rho(), 1e-3);

  std::vector<double> lx, ly, scaled;
  for (double lambda : s.ladder) {
    const ClosedLoopResult r =
        simulate_closed_loop(s.params, s.u0, s.forcing, PenaltyLaw{s.mask, {lambda}}, s.K,
                             s.grid, Scheme::kIntegratingFactorRK4);
    lx.push_back(std::log(lambda));
    ly.push_back(std::log(r.report.integral_d2));
    scaled.push_back(*r.report.scaled_integral);
  }
  // The scaled integral may not grow as lambda shrinks.
  double growth = 0.0;
  for (std::size_t i = 1; i < scaled.size(); ++i)
    growth = std::max(growth, scaled[i] / scaled[i - 1]);
  rec.at_most("scaled_integral_growth", growth, 1.1);

  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  rec.within("loglog_slope", sxy / sxx, 1.0, 0.2);
}

struct SuiteDef {
  const char* name;
  double budget_seconds;
  void (*run)(Recorder&);
};

inline const SuiteDef& suite_def(int id) {
  static const SuiteDef defs[kSuiteCount] = {
      {"operator", 5.0, operator_suite},       {"conservation", 30.0, conservation_suite},
      {"duality", 10.0, duality_suite},        {"gradient", 30.0, gradient_suite},
      {"optimality", 120.0, optimality_suite}, {"projection", 30.0, projection_suite},
      {"invariance", 60.0, invariance_suite},  {"penalty", 120.0, penalty_suite},
  };
  if (id < 1 || id > kSuiteCount) throw InputError("check: suite id must lie in [1, 8]");
  return defs[id - 1];
}

}  // namespace detail

inline SuiteResult run_suite(int id) {
  const detail::SuiteDef& def = detail::suite_def(id);
  SuiteResult out;
  out.id = id;
  out.name = def.name;
  out.budget_seconds = def.budget_seconds;
  detail::Recorder rec(out);
  const auto t0 = std::chrono::steady_clock::now();
  def.run(rec);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline std::vector<SuiteResult> run_all() {
  std::vector<SuiteResult> out;
  for (int id = 1; id <= kSuiteCount; ++id) out.push_back(run_suite(id));
  return out;
}

inline std::string describe(const Property& p) {
  char buf[160];
  switch (p.relation) {
    case Relation::kAtMost:
      std::snprintf(buf, sizeof buf, "%.6g <= %.6g", p.value, p.limit);
      break;
    case Relation::kAtLeast:
      std::snprintf(buf, sizeof buf, "%.6g >= %.6g", p.value, p.limit);
      break;
    case Relation::kWithin:
      std::snprintf(buf, sizeof buf, "%.6g in %.6g +- %.6g", p.value, p.target, p.limit);
      break;
  }
  return buf;
}

}  // namespace sabra::check

#endif  // SABRA_SELFCHECK_HPP
