// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_ADJOINT_HPP
#define SABRA_ADJOINT_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sabra/integrator.hpp"
#include "sabra/shell_core.hpp"

namespace sabra {

enum class CostKind { kJ1, kJ2 };

/// J1 = 1/2 int |g|^2 + 1/2 int |A^{1/2} u|^2
/// J2 = 1/2 int |u - u_d|^2 + beta/2 int |g|^2 [+ 1/2 |u(T) - u_d(T)|^2]
///
/// The terminal term is on by default so that the discrete adjoint carries
/// the terminal value u(T) - u_d(T); switch it off for the pure running cost.
struct CostSpec {
  CostKind kind = CostKind::kJ1;
  double beta = 1.0;
  std::vector<ShellState> desired;  // u_d at every grid time (J2 only)
  bool terminal_penalty = true;

  static CostSpec j1() { return {}; }
  static CostSpec j2(double beta, std::vector<ShellState> desired,
                     bool terminal_penalty = true) {
    CostSpec s;
    s.kind = CostKind::kJ2;
    s.beta = beta;
    s.desired = std::move(desired);
    s.terminal_penalty = terminal_penalty;
    return s;
  }

  void validate(const ShellParams& params, const TimeGrid& grid) const {
    if (kind == CostKind::kJ1) return;
    if (!(beta > 0.0) || !std::isfinite(beta))
      throw InputError("cost: beta must be > 0");
    if (desired.empty()) throw InputError("cost: J2 requires a desired trajectory");
    if (static_cast<int>(desired.size()) != grid.n_steps() + 1)
      throw InputError("cost: desired trajectory does not match the grid");
    for (const auto& d : desired)
      if (d.size() != params.n_shells() || !d.allFinite())
        throw InputError("cost: desired trajectory shape/finiteness");
  }

  double control_weight() const { return kind == CostKind::kJ1 ? 1.0 : beta; }
};

/// Solution w of the linearized system, rows t_0..t_N with w(0) = 0.
struct TangentTrajectory {
  std::vector<ShellState> states;
};

/// Backward solution w~, rows t_0..t_N; the last row is the terminal value.
/// Row k < N is the multiplier paired with the control on [t_k, t_{k+1}).
struct AdjointTrajectory {
  std::vector<ShellState> states;
};

namespace detail {

inline void check_base(const ShellParams& params, const Trajectory& base,
                       const ControlGrid& grid_field, const char* what) {
  if (static_cast<int>(base.states.size()) != base.grid.n_steps() + 1)
    throw InputError(std::string(what) + ": base trajectory is incomplete");
  grid_field.check_shape(base.grid, params, what);
}

inline ShellState lerp(const ShellState& x, const ShellState& y, double s) {
  return (1.0 - s) * x + s * y;
}

}  // namespace detail

/// Tangent system dw/dt + nu A w + B'(u_g) w = h, w(0) = 0, discretized
/// consistently with the forward scheme.
///
/// For the implicit Euler scheme this is the exact derivative of the discrete
/// forward map: M_k w^{k+1} + dt B(w^k, u^{k+1}) = w^k + dt h^k.
/// For integrating-factor RK4 it is the continuous tangent integrated with the
/// same stepper and a linearly interpolated base state.
inline TangentTrajectory solve_tangent(const ShellParams& params,
                                       const Trajectory& base,
                                       const ControlGrid& h, Scheme scheme) {
  detail::check_base(params, base, h, "solve_tangent");
  const double dt = base.grid.dt();
  const int steps = base.grid.n_steps();
  TangentTrajectory out;
  out.states.reserve(static_cast<std::size_t>(steps) + 1);
  out.states.push_back(ShellState::Zero(params.n_shells()));
  const Eigen::VectorXd rates = detail::viscous_rates(params);
  for (int k = 0; k < steps; ++k) {
    const ShellState& w = out.states.back();
    const ShellState& u0 = base.at(k);
    const ShellState& u1 = base.at(k + 1);
    ShellState next;
    if (scheme == Scheme::kSemiImplicitEuler) {
      const Eigen::MatrixXcd M = detail::euler_operator(params, u0, dt);
      next = M.partialPivLu().solve(w - dt * bilinear_B(params, w, u1) + dt * h[k]);
    } else {
      const double t0 = base.grid.time(k);
      next = detail::lawson_rk4_step(
          rates, w, t0, dt, [&](double t, const ShellState& x) -> ShellState {
            const ShellState u = detail::lerp(u0, u1, (t - t0) / dt);
            return h[k] - linearize_B(params, u, x);
          });
    }
    out.states.push_back(std::move(next));
  }
  return out;
}

/// Adjoint system -dw~/dt + nu A w~ + B'(u_g)* w~ = source, w~(T) = terminal.
///
/// Source row k pairs with the state at t_{k+1}. For the implicit Euler scheme
/// the recursion is the exact real transpose of `solve_tangent`:
///   lambda^N = terminal + dt S^N,
///   w~^k     = M_k^{-H} lambda^{k+1},
///   lambda^k = dt S^k + w~^k - dt C_{k}(w~^k),
/// where C_k is the real transpose of w -> B(w, u^{k+1}).
inline AdjointTrajectory solve_adjoint(const ShellParams& params,
                                       const Trajectory& base,
                                       const ControlGrid& source,
                                       const ShellState& terminal,
                                       Scheme scheme) {
  detail::check_base(params, base, source, "solve_adjoint");
  require_length(params, terminal, "solve_adjoint(terminal)");
  const double dt = base.grid.dt();
  const int steps = base.grid.n_steps();
  AdjointTrajectory out;
  out.states.assign(static_cast<std::size_t>(steps) + 1,
                    ShellState::Zero(params.n_shells()));
  out.states[static_cast<std::size_t>(steps)] = terminal;

  if (scheme == Scheme::kSemiImplicitEuler) {
    ShellState lambda = terminal + dt * source[steps - 1];
    for (int k = steps - 1; k >= 0; --k) {
      const Eigen::MatrixXcd M = detail::euler_operator(params, base.at(k), dt);
      const ShellState q = M.adjoint().partialPivLu().solve(lambda);
      out.states[static_cast<std::size_t>(k)] = q;
      if (k > 0)
        lambda = dt * source[k - 1] + q -
                 dt * first_slot_adjoint(params, base.at(k + 1), q);
    }
    return out;
  }

  const Eigen::VectorXd rates = detail::viscous_rates(params);
  for (int k = steps - 1; k >= 0; --k) {
    const ShellState& u0 = base.at(k);
    const ShellState& u1 = base.at(k + 1);
    // Backward time s = t_{k+1} - t.
    out.states[static_cast<std::size_t>(k)] = detail::lawson_rk4_step(
        rates, out.states[static_cast<std::size_t>(k) + 1], 0.0, dt,
        [&](double s, const ShellState& x) -> ShellState {
          const ShellState u = detail::lerp(u1, u0, s / dt);
          return source[k] - adjoint_linearize_B(params, u, x);
        });
  }
  return out;
}

/// Rectangle-rule discrete cost; controls on [t_k, t_{k+1}) and running state
/// terms at the right end points t_1..t_N.
inline double evaluate_cost(const ShellParams& params, const CostSpec& spec,
                            const Trajectory& traj, const ControlGrid& g) {
  spec.validate(params, traj.grid);
  const bool has_control = g.n_steps() > 0;
  if (has_control) g.check_shape(traj.grid, params, "evaluate_cost");
  const double dt = traj.grid.dt();
  const int steps = traj.grid.n_steps();
  double control = 0.0;
  if (has_control)
    for (int k = 0; k < steps; ++k) control += g[k].squaredNorm();
  control *= 0.5 * dt * spec.control_weight();

  double state = 0.0;
  if (spec.kind == CostKind::kJ1) {
    for (int k = 1; k <= steps; ++k) state += weighted_square(params, traj.at(k), 0.5);
    state *= 0.5 * dt;
  } else {
    for (int k = 1; k <= steps; ++k)
      state += (traj.at(k) - spec.desired[static_cast<std::size_t>(k)]).squaredNorm();
    state *= 0.5 * dt;
    if (spec.terminal_penalty)
      state += 0.5 * (traj.final_state() - spec.desired.back()).squaredNorm();
  }
  return control + state;
}

/// Adjoint source and terminal value for a cost on a given forward solution.
struct AdjointData {
  ControlGrid source;
  ShellState terminal;
};

inline AdjointData adjoint_data(const ShellParams& params, const CostSpec& spec,
                                const Trajectory& traj) {
  const int steps = traj.grid.n_steps();
  AdjointData d{ControlGrid(steps, params.n_shells()),
                ShellState::Zero(params.n_shells())};
  for (int k = 0; k < steps; ++k) {
    const ShellState& u = traj.at(k + 1);
    d.source[k] = spec.kind == CostKind::kJ1
                      ? apply_A_power(params, u, 1.0)
                      : ShellState(u - spec.desired[static_cast<std::size_t>(k) + 1]);
  }
  if (spec.kind == CostKind::kJ2 && spec.terminal_penalty)
    d.terminal = traj.final_state() - spec.desired.back();
  return d;
}

struct CostAndGradient {
  double cost = 0.0;
  ControlGrid gradient;  // w.r.t. the grid inner product dt * sum Re(., .)
  Trajectory trajectory;
  AdjointTrajectory adjoint;
};

/// Forward solve, cost and discrete-adjoint gradient in one pass (implicit
/// Euler scheme, so the gradient is exact for the discrete cost).
inline CostAndGradient cost_and_gradient(const ShellParams& params,
                                         const CostSpec& spec,
                                         const ControlGrid& g,
                                         const ShellState& u0,
                                         const ForcingSpec& f,
                                         const TimeGrid& grid) {
  spec.validate(params, grid);
  g.check_shape(grid, params, "compute_gradient");
  CostAndGradient out{0.0, {}, simulate(params, u0, f, g, grid,
                                        Scheme::kSemiImplicitEuler), {}};
  out.cost = evaluate_cost(params, spec, out.trajectory, g);
  const AdjointData data = adjoint_data(params, spec, out.trajectory);
  out.adjoint = solve_adjoint(params, out.trajectory, data.source, data.terminal,
                              Scheme::kSemiImplicitEuler);
  out.gradient = ControlGrid(grid.n_steps(), params.n_shells());
  const double w = spec.control_weight();
  for (int k = 0; k < grid.n_steps(); ++k)
    out.gradient[k] = w * g[k] + out.adjoint.states[static_cast<std::size_t>(k)];
  return out;
}

/// J1: g + w~ with source A u; J2: beta g + w~ with source u - u_d.
inline ControlGrid compute_gradient(const ShellParams& params,
                                    const CostSpec& spec, const ControlGrid& g,
                                    const ShellState& u0, const ForcingSpec& f,
                                    const TimeGrid& grid) {
  return cost_and_gradient(params, spec, g, u0, f, grid).gradient;
}

/// Normalized defect of dt sum Re(h2^k, w_{h1}^{k+1}) = dt sum Re(w~_{h2}^k, h1^k).
inline double duality_residual(const ShellParams& params, const Trajectory& base,
                               const ControlGrid& h1, const ControlGrid& h2,
                               Scheme scheme) {
  const double dt = base.grid.dt();
  const int steps = base.grid.n_steps();
  const TangentTrajectory w = solve_tangent(params, base, h1, scheme);
  const AdjointTrajectory wt = solve_adjoint(
      params, base, h2, ShellState::Zero(params.n_shells()), scheme);
  double lhs = 0.0, rhs = 0.0, w_sq = 0.0, wt_sq = 0.0;
  for (int k = 0; k < steps; ++k) {
    const ShellState& wk = w.states[static_cast<std::size_t>(k) + 1];
    const ShellState& qk = wt.states[static_cast<std::size_t>(k)];
    lhs += real_inner(h2[k], wk);
    rhs += real_inner(qk, h1[k]);
    w_sq += wk.squaredNorm();
    wt_sq += qk.squaredNorm();
  }
  lhs *= dt;
  rhs *= dt;
  const double scale = grid_norm(h2, dt) * std::sqrt(dt * w_sq) +
                       grid_norm(h1, dt) * std::sqrt(dt * wt_sq);
  if (scale == 0.0) return 0.0;
  return std::abs(lhs - rhs) / scale;
}

}  // namespace sabra

#endif  // SABRA_ADJOINT_HPP
