// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sabra/adjoint.hpp"
#include "test_util.hpp"

namespace sabra {
namespace {

using testing::random_control;
using testing::random_state;

struct Problem {
  ShellParams params;
  TimeGrid grid;
  ShellState u0;
  ForcingSpec forcing;
};

Problem small_problem(int n, int steps, double dt, std::uint64_t seed) {
  Problem s{ShellParams::make(n).with_nu(0.02), TimeGrid::make(steps * dt, dt),
          random_initial_state(ShellParams::make(n), seed, 0.8),
          ForcingSpec::constant({0.05, 0.02})};
  return s;
}

std::vector<ShellState> random_desired(const TimeGrid& grid, int n, std::mt19937_64& rng) {
  std::vector<ShellState> d;
  for (int k = 0; k <= grid.n_steps(); ++k) d.push_back(random_state(n, rng, 0.3));
  return d;
}

TEST(Duality, EulerPairingDefect) {
  const Problem s = small_problem(6, 50, 0.02, 11);
  std::mt19937_64 rng(21);
  const Trajectory base = simulate(s.params, s.u0, s.forcing, s.grid,
                                   Scheme::kSemiImplicitEuler);
  for (int trial = 0; trial < 100; ++trial) {
    const ControlGrid h1 = random_control(50, 6, rng);
    const ControlGrid h2 = random_control(50, 6, rng);
    EXPECT_LE(duality_residual(s.params, base, h1, h2, Scheme::kSemiImplicitEuler), 1e-10);
  }
}

TEST(Duality, EulerMatrixTranspose) {
  // Assemble h -> (w^1..w^N) and s -> (w~^0..w~^{N-1}) as real matrices.
  const int n = 3, steps = 4, dim = 2 * n * steps;
  const Problem s = small_problem(n, steps, 0.1, 12);
  const Trajectory base = simulate(s.params, s.u0, s.forcing, s.grid,
                                   Scheme::kSemiImplicitEuler);
  auto unit = [&](int j) {
    ControlGrid h(steps, n);
    const int k = j / (2 * n), c = j % (2 * n);
    h[k](c % n) = c < n ? cplx{1.0, 0.0} : cplx{0.0, 1.0};
    return h;
  };
  Eigen::MatrixXd T(dim, dim), Tadj(dim, dim);
  for (int j = 0; j < dim; ++j) {
    const ControlGrid h = unit(j);
    const TangentTrajectory w = solve_tangent(s.params, base, h, Scheme::kSemiImplicitEuler);
    const AdjointTrajectory q = solve_adjoint(s.params, base, h, ShellState::Zero(n),
                                              Scheme::kSemiImplicitEuler);
    for (int k = 0; k < steps; ++k) {
      const ShellState& wk = w.states[static_cast<std::size_t>(k) + 1];
      const ShellState& qk = q.states[static_cast<std::size_t>(k)];
      T.col(j).segment(2 * n * k, n) = wk.real();
      T.col(j).segment(2 * n * k + n, n) = wk.imag();
      Tadj.col(j).segment(2 * n * k, n) = qk.real();
      Tadj.col(j).segment(2 * n * k + n, n) = qk.imag();
    }
  }
  EXPECT_LE((T.transpose() - Tadj).cwiseAbs().maxCoeff(), 1e-12 * T.cwiseAbs().maxCoeff());
}

TEST(Duality, TangentIsDerivativeOfForwardMap) {
  const Problem s = small_problem(5, 30, 0.05, 13);
  std::mt19937_64 rng(22);
  const ControlGrid g = random_control(30, 5, rng, 0.2);
  const ControlGrid h = random_control(30, 5, rng);
  const Trajectory base = simulate(s.params, s.u0, s.forcing, g, s.grid,
                                   Scheme::kSemiImplicitEuler);
  const TangentTrajectory w = solve_tangent(s.params, base, h, Scheme::kSemiImplicitEuler);
  const double eps = 1e-6;
  const Trajectory plus = simulate(s.params, s.u0, s.forcing, g + eps * h, s.grid,
                                   Scheme::kSemiImplicitEuler);
  const Trajectory minus = simulate(s.params, s.u0, s.forcing, g - eps * h, s.grid,
                                    Scheme::kSemiImplicitEuler);
  for (int k = 0; k <= 30; ++k) {
    const ShellState fd = (plus.at(k) - minus.at(k)) / (2 * eps);
    EXPECT_LE((fd - w.states[static_cast<std::size_t>(k)]).norm(),
              1e-7 * std::max(1.0, fd.norm()));
  }
}

TEST(Duality, RK4DefectIsSmall) {
  // The RK4 tangent/adjoint pair discretizes the continuous systems separately,
  // so the pairing holds only up to truncation error.
  const auto p = ShellParams::make(5).with_nu(0.02);
  const ShellState u0 = random_initial_state(p, 14, 0.5);
  for (int steps : {20, 40, 80}) {
    const TimeGrid grid = TimeGrid::make(1.0, 1.0 / steps);
    const Trajectory base = simulate(p, u0, ForcingSpec::zero(), grid,
                                     Scheme::kIntegratingFactorRK4);
    std::mt19937_64 local(24);
    const ControlGrid h1 = random_control(steps, 5, local);
    const ControlGrid h2 = random_control(steps, 5, local);
    const double d = duality_residual(p, base, h1, h2, Scheme::kIntegratingFactorRK4);
    EXPECT_LT(d, 1e-3);
  }
}

TEST(Adjoint, ZeroDataGivesZero) {
  const Problem s = small_problem(4, 10, 0.1, 15);
  const Trajectory base = simulate(s.params, s.u0, s.forcing, s.grid,
                                   Scheme::kSemiImplicitEuler);
  for (Scheme sc : {Scheme::kSemiImplicitEuler, Scheme::kIntegratingFactorRK4}) {
    const AdjointTrajectory q =
        solve_adjoint(s.params, base, ControlGrid(10, 4), ShellState::Zero(4), sc);
    for (const auto& row : q.states) EXPECT_EQ(row.norm(), 0.0);
  }
}

TEST(Cost, SingleModeClosedForm) {
  const auto p = ShellParams::make(4).with_nu(0.1);
  const auto grid = TimeGrid::make(1.0, 0.1);
  ShellState u0 = ShellState::Zero(4);
  u0(1) = cplx{0.0, 2.0};
  const Trajectory t = simulate(p, u0, ForcingSpec::zero(), grid, Scheme::kSemiImplicitEuler);
  const double r = p.nu() * 16.0;
  double expected = 0.0;
  for (int k = 1; k <= 10; ++k) expected += 16.0 * 4.0 * std::pow(1.0 + 0.1 * r, -2 * k);
  expected *= 0.5 * 0.1;
  EXPECT_NEAR(evaluate_cost(p, CostSpec::j1(), t, ControlGrid{}), expected, 1e-12 * expected);

  ControlGrid g(10, 4);
  g[3](0) = cplx{3.0, 4.0};
  EXPECT_NEAR(evaluate_cost(p, CostSpec::j1(), t, g), expected + 0.5 * 0.1 * 25.0, 1e-12);

  std::vector<ShellState> zero(11, ShellState::Zero(4));
  const double energy_sum = [&] {
    double acc = 0.0;
    for (int k = 1; k <= 10; ++k) acc += 4.0 * std::pow(1.0 + 0.1 * r, -2 * k);
    return acc;
  }();
  const double terminal = 0.5 * 4.0 * std::pow(1.0 + 0.1 * r, -20);
  EXPECT_NEAR(evaluate_cost(p, CostSpec::j2(2.0, zero, false), t, g),
              0.05 * energy_sum + 0.05 * 2.0 * 25.0, 1e-12);
  EXPECT_NEAR(evaluate_cost(p, CostSpec::j2(2.0, zero, true), t, g),
              0.05 * energy_sum + 0.05 * 2.0 * 25.0 + terminal, 1e-12);
}

TEST(Cost, Validation) {
  const auto p = ShellParams::make(4);
  const auto grid = TimeGrid::make(1.0, 0.1);
  EXPECT_THROW(CostSpec::j2(0.0, std::vector<ShellState>(11, ShellState::Zero(4)))
                   .validate(p, grid),
               InputError);
  EXPECT_THROW(CostSpec::j2(1.0, {}).validate(p, grid), InputError);
  EXPECT_THROW(CostSpec::j2(1.0, std::vector<ShellState>(10, ShellState::Zero(4)))
                   .validate(p, grid),
               InputError);
  EXPECT_NO_THROW(CostSpec::j1().validate(p, grid));
}

void check_gradient(const CostSpec& spec, const Problem& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int steps = s.grid.n_steps(), n = s.params.n_shells();
  const ControlGrid g = random_control(steps, n, rng, 0.3);
  const CostAndGradient cg = cost_and_gradient(s.params, spec, g, s.u0, s.forcing, s.grid);
  auto cost_at = [&](const ControlGrid& x) {
    return evaluate_cost(s.params, spec,
                         simulate(s.params, s.u0, s.forcing, x, s.grid,
                                  Scheme::kSemiImplicitEuler),
                         x);
  };
  EXPECT_DOUBLE_EQ(cg.cost, cost_at(g));
  for (int trial = 0; trial < 20; ++trial) {
    ControlGrid d = random_control(steps, n, rng);
    d = (1.0 / grid_norm(d, s.grid.dt())) * d;
    const double eps = 1e-5;
    const double fd = (cost_at(g + eps * d) - cost_at(g - eps * d)) / (2 * eps);
    const double ad = grid_inner(cg.gradient, d, s.grid.dt());
    EXPECT_LE(std::abs(fd - ad), 1e-6 * std::max(std::abs(fd), 1e-3 * cg.cost))
        << "fd=" << fd << " adjoint=" << ad;
  }
}

TEST(Gradient, J1MatchesFiniteDifferences) {
  check_gradient(CostSpec::j1(), small_problem(5, 40, 0.025, 31), 41);
}

TEST(Gradient, J2TerminalMatchesFiniteDifferences) {
  const Problem s = small_problem(5, 40, 0.025, 32);
  std::mt19937_64 rng(42);
  check_gradient(CostSpec::j2(0.5, random_desired(s.grid, 5, rng), true), s, 43);
}

TEST(Gradient, J2RunningOnlyMatchesFiniteDifferences) {
  const Problem s = small_problem(5, 40, 0.025, 33);
  std::mt19937_64 rng(44);
  check_gradient(CostSpec::j2(2.0, random_desired(s.grid, 5, rng), false), s, 45);
}

TEST(Gradient, ZeroAtTrivialMinimum) {
  // u0 = 0, f = 0, g = 0 is the global minimizer of J1.
  const auto p = ShellParams::make(4);
  const auto grid = TimeGrid::make(0.5, 0.05);
  const ControlGrid G = compute_gradient(p, CostSpec::j1(), ControlGrid::zeros(grid, p),
                                         ShellState::Zero(4), ForcingSpec::zero(), grid);
  EXPECT_EQ(grid_norm(G, grid.dt()), 0.0);
}

}  // namespace
}  // namespace sabra
