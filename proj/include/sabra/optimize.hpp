// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_OPTIMIZE_HPP
#define SABRA_OPTIMIZE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sabra/adjoint.hpp"
#include "sabra/integrator.hpp"

namespace sabra {

struct OptimizeConfig {
  int max_iters = 20000;
  double step0 = 1.0;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  double tol_grad = 1e-6;
  int max_backtracks = 60;
  std::uint64_t seed = 0;  // reserved: initialization is deterministic (g = 0)

  void validate() const {
    if (max_iters < 0) throw InputError("optimizer: max_iters must be >= 0");
    if (!(step0 > 0.0)) throw InputError("optimizer: step0 must be > 0");
    if (!(armijo_c > 0.0 && armijo_c < 1.0))
      throw InputError("optimizer: armijo_c must lie in (0,1)");
    if (!(shrink > 0.0 && shrink < 1.0))
      throw InputError("optimizer: shrink must lie in (0,1)");
    if (!(tol_grad > 0.0)) throw InputError("optimizer: tol_grad must be > 0");
    if (max_backtracks < 1) throw InputError("optimizer: max_backtracks must be >= 1");
  }
};

struct OptimizationReport {
  std::vector<double> cost;       // cost[0] at g = 0, then one per accepted step
  std::vector<double> grad_norm;  // grid norm of the gradient at each iterate
  std::vector<double> step;       // accepted step lengths
  double final_residual = 0.0;    // |g + w~| (J1) or |beta g + w~| (J2), normalized
  bool converged = false;
  int iterations = 0;
  int rejected_blowups = 0;
};

struct OptimizeResult {
  ControlGrid control;
  Trajectory trajectory;
  OptimizationReport report;
};

/// Grid norm of the optimality system residual, normalized by max(1, |g|).
inline double optimality_residual(const ShellParams& params, const CostSpec& spec,
                                  const ControlGrid& g, const ShellState& u0,
                                  const ForcingSpec& f, const TimeGrid& grid) {
  spec.validate(params, grid);
  const Trajectory traj =
      simulate(params, u0, f, g, grid, Scheme::kSemiImplicitEuler);
  const AdjointData data = adjoint_data(params, spec, traj);
  const AdjointTrajectory wt = solve_adjoint(params, traj, data.source,
                                             data.terminal,
                                             Scheme::kSemiImplicitEuler);
  const double w = spec.control_weight();
  double acc = 0.0;
  for (int k = 0; k < grid.n_steps(); ++k)
    acc += (w * g[k] + wt.states[static_cast<std::size_t>(k)]).squaredNorm();
  const double dt = grid.dt();
  return std::sqrt(dt * acc) / std::max(1.0, grid_norm(g, dt));
}

/// Steepest descent from g = 0 with Armijo backtracking:
///   accept s when J(g - s G) <= J(g) - armijo_c s |G|^2.
/// The first trial step of each line search is the Barzilai-Borwein length
/// from the previous two iterates (step0 on the first iteration).
inline OptimizeResult optimize(const ShellParams& params, const CostSpec& spec,
                               const ShellState& u0, const ForcingSpec& f,
                               const TimeGrid& grid, const OptimizeConfig& config) {
  config.validate();
  spec.validate(params, grid);
  const double dt = grid.dt();
  ControlGrid g = ControlGrid::zeros(grid, params);
  CostAndGradient cur = cost_and_gradient(params, spec, g, u0, f, grid);

  OptimizationReport rep;
  rep.cost.push_back(cur.cost);
  double trial = config.step0;
  ControlGrid prev_g, prev_grad;
  bool have_prev = false;

  for (int it = 0;; ++it) {
    const double gnorm = grid_norm(cur.gradient, dt);
    rep.grad_norm.push_back(gnorm);
    rep.final_residual = gnorm / std::max(1.0, grid_norm(g, dt));
    if (rep.final_residual <= config.tol_grad) {
      rep.converged = true;
      break;
    }
    if (it >= config.max_iters) break;

    if (have_prev) {
      const ControlGrid dg = g - prev_g;
      const ControlGrid dG = cur.gradient - prev_grad;
      const double sy = grid_inner(dg, dG, dt);
      const double ss = grid_inner(dg, dg, dt);
      if (sy > 0.0 && std::isfinite(ss / sy)) trial = ss / sy;
    }

    const double g2 = gnorm * gnorm;
    double s = trial;
    bool accepted = false;
    CostAndGradient next;
    for (int bt = 0; bt < config.max_backtracks; ++bt) {
      const ControlGrid candidate = g - s * cur.gradient;
      try {
        next = cost_and_gradient(params, spec, candidate, u0, f, grid);
        if (next.cost <= cur.cost - config.armijo_c * s * g2) {
          accepted = true;
          break;
        }
      } catch (const BlowUpError&) {
        ++rep.rejected_blowups;
      }
      s *= config.shrink;
    }
    if (!accepted) break;

    prev_g = g;
    prev_grad = cur.gradient;
    have_prev = true;
    g = g - s * cur.gradient;
    cur = std::move(next);
    rep.cost.push_back(cur.cost);
    rep.step.push_back(s);
    rep.iterations = it + 1;
  }

  cur.trajectory.applied_control = g;
  return {std::move(g), std::move(cur.trajectory), std::move(rep)};
}

}  // namespace sabra

#endif  // SABRA_OPTIMIZE_HPP
