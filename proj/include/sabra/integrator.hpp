// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_INTEGRATOR_HPP
#define SABRA_INTEGRATOR_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sabra/shell_core.hpp"

namespace sabra {

/// Raised when a state stops being finite. Carries the offending step index.
class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(int step, const std::string& what)
      : std::runtime_error("blow-up at step " + std::to_string(step) + ": " +
                           what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Uniform grid t_k = k * dt, k = 0..n_steps, with n_steps * dt = t_end.
class TimeGrid {
 public:
  TimeGrid() = default;  // one step of length 1

  static TimeGrid make(double t_end, double dt) {
    if (!(t_end > 0.0) || !std::isfinite(t_end))
      throw InputError("t_end must be > 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("dt must be > 0");
    const double ratio = t_end / dt;
    const auto n = static_cast<long long>(std::llround(ratio));
    if (n < 1) throw InputError("grid must contain at least one step");
    if (std::abs(static_cast<double>(n) * dt - t_end) > 1e-9 * t_end)
      throw InputError("t_end must be an integer multiple of dt");
    if (n > 100'000'000) throw InputError("too many time steps");
    TimeGrid g;
    g.t_end_ = t_end;
    g.dt_ = dt;
    g.n_steps_ = static_cast<int>(n);
    return g;
  }

  double t_end() const { return t_end_; }
  double dt() const { return dt_; }
  int n_steps() const { return n_steps_; }
  double time(int k) const { return k * dt_; }

  bool operator==(const TimeGrid&) const = default;

 private:
  double t_end_ = 1.0;
  double dt_ = 1.0;
  int n_steps_ = 1;
};

enum class Scheme { kSemiImplicitEuler, kIntegratingFactorRK4 };

inline std::string_view to_string(Scheme s) {
  return s == Scheme::kSemiImplicitEuler ? "semi-implicit-euler"
                                         : "integrating-factor-rk4";
}

inline Scheme parse_scheme(std::string_view tag) {
  if (tag == "semi-implicit-euler") return Scheme::kSemiImplicitEuler;
  if (tag == "integrating-factor-rk4") return Scheme::kIntegratingFactorRK4;
  throw InputError("unknown scheme '" + std::string(tag) + "'");
}

/// Per-step, per-shell complex values; row k acts on [t_k, t_{k+1}).
class ControlGrid {
 public:
  ControlGrid() = default;
  ControlGrid(int n_steps, int n_shells)
      : rows_(static_cast<std::size_t>(n_steps), ShellState::Zero(n_shells)) {}
  explicit ControlGrid(std::vector<ShellState> rows) : rows_(std::move(rows)) {}

  static ControlGrid zeros(const TimeGrid& grid, const ShellParams& params) {
    return ControlGrid(grid.n_steps(), params.n_shells());
  }

  int n_steps() const { return static_cast<int>(rows_.size()); }
  int n_shells() const {
    return rows_.empty() ? 0 : static_cast<int>(rows_.front().size());
  }
  const ShellState& operator[](int k) const { return rows_[k]; }
  ShellState& operator[](int k) { return rows_[k]; }
  const std::vector<ShellState>& rows() const { return rows_; }

  ControlGrid& operator+=(const ControlGrid& o) {
    for (int k = 0; k < n_steps(); ++k) rows_[k] += o.rows_[k];
    return *this;
  }
  ControlGrid& operator*=(double s) {
    for (auto& r : rows_) r *= s;
    return *this;
  }
  friend ControlGrid operator+(ControlGrid x, const ControlGrid& y) {
    return x += y;
  }
  friend ControlGrid operator-(ControlGrid x, const ControlGrid& y) {
    for (int k = 0; k < x.n_steps(); ++k) x.rows_[k] -= y.rows_[k];
    return x;
  }
  friend ControlGrid operator*(double s, ControlGrid x) { return x *= s; }

  bool all_finite() const {
    for (const auto& r : rows_)
      if (!r.allFinite()) return false;
    return true;
  }

  void check_shape(const TimeGrid& grid, const ShellParams& params,
                   const char* what) const {
    if (n_steps() != grid.n_steps() ||
        (n_steps() > 0 && n_shells() != params.n_shells()))
      throw InputError(std::string(what) + ": control grid shape mismatch");
  }

 private:
  std::vector<ShellState> rows_;
};

/// Grid inner product dt * sum_k Re(x_k, y_k).
inline double grid_inner(const ControlGrid& x, const ControlGrid& y, double dt) {
  double acc = 0.0;
  for (int k = 0; k < x.n_steps(); ++k) acc += real_inner(x[k], y[k]);
  return dt * acc;
}

inline double grid_norm(const ControlGrid& x, double dt) {
  return std::sqrt(grid_inner(x, x, dt));
}

/// External forcing f. `constant` applies one amplitude to every shell;
/// `per_shell_constant` holds one time-independent vector; `grid_sampled`
/// holds one row per step.
class ForcingSpec {
 public:
  enum class Mode { kZero, kConstant, kPerShellConstant, kGridSampled };

  static ForcingSpec zero() { return ForcingSpec{}; }
  static ForcingSpec constant(cplx value) {
    ForcingSpec f;
    f.mode_ = Mode::kConstant;
    f.constant_ = value;
    return f;
  }
  static ForcingSpec per_shell(ShellState values) {
    ForcingSpec f;
    f.mode_ = Mode::kPerShellConstant;
    f.rows_.push_back(std::move(values));
    return f;
  }
  static ForcingSpec grid_sampled(std::vector<ShellState> rows) {
    ForcingSpec f;
    f.mode_ = Mode::kGridSampled;
    f.rows_ = std::move(rows);
    return f;
  }

  Mode mode() const { return mode_; }
  cplx constant_value() const { return constant_; }
  const std::vector<ShellState>& rows() const { return rows_; }

  void validate(const ShellParams& params, const TimeGrid& grid) const {
    const int n = params.n_shells();
    switch (mode_) {
      case Mode::kZero:
        return;
      case Mode::kConstant:
        if (!std::isfinite(constant_.real()) || !std::isfinite(constant_.imag()))
          throw InputError("forcing: non-finite constant");
        return;
      case Mode::kPerShellConstant:
        if (rows_.size() != 1 || rows_[0].size() != n || !rows_[0].allFinite())
          throw InputError("forcing: per-shell values must have n_shells finite entries");
        return;
      case Mode::kGridSampled:
        if (static_cast<int>(rows_.size()) != grid.n_steps())
          throw InputError("forcing: grid-sampled rows must equal n_steps");
        for (const auto& r : rows_)
          if (r.size() != n || !r.allFinite())
            throw InputError("forcing: grid-sampled row shape/finiteness");
        return;
    }
  }

  /// Forcing value on [t_k, t_{k+1}).
  ShellState at(int k, int n_shells) const {
    switch (mode_) {
      case Mode::kZero:
        return ShellState::Zero(n_shells);
      case Mode::kConstant:
        return ShellState::Constant(n_shells, constant_);
      case Mode::kPerShellConstant:
        return rows_[0];
      case Mode::kGridSampled:
        return rows_[static_cast<std::size_t>(k)];
    }
    return ShellState::Zero(n_shells);
  }

 private:
  Mode mode_ = Mode::kZero;
  cplx constant_{0.0, 0.0};
  std::vector<ShellState> rows_;
};

struct Trajectory {
  TimeGrid grid;
  std::vector<ShellState> states;  // n_steps + 1 rows
  std::optional<ControlGrid> applied_control;

  const ShellState& at(int k) const { return states[static_cast<std::size_t>(k)]; }
  const ShellState& final_state() const { return states.back(); }
};

/// u_n = scale * lambda^{-n/2} (xi_n + i eta_n), xi, eta ~ N(0, 1).
inline ShellState random_initial_state(const ShellParams& params,
                                       std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ShellState u(params.n_shells());
  for (int n = 1; n <= params.n_shells(); ++n) {
    const double xi = gauss(rng);
    const double eta = gauss(rng);
    u(n - 1) = scale * std::pow(params.lambda(), -0.5 * n) * cplx{xi, eta};
  }
  return u;
}

/// Matrix of the complex-linear map v -> B(u, v).
inline Eigen::MatrixXcd second_slot_matrix(const ShellParams& params,
                                           const ShellState& u) {
  using detail::at;
  const int N = params.n_shells();
  const double a = params.a(), b = params.b();
  const cplx minus_i{0.0, -1.0};
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(N, N);
  for (int n = 1; n <= N; ++n) {
    if (n + 2 <= N) M(n - 1, n + 1) += minus_i * a * params.k(n + 1) * std::conj(at(u, n + 1));
    if (n + 1 <= N) M(n - 1, n) += minus_i * b * params.k(n) * std::conj(at(u, n - 1));
    if (n - 2 >= 1) M(n - 1, n - 3) += minus_i * a * params.k(n - 1) * at(u, n - 1);
    if (n - 1 >= 1) M(n - 1, n - 2) += minus_i * b * params.k(n - 1) * at(u, n - 2);
  }
  return M;
}

namespace detail {

/// M = I + dt nu A + dt B(u, .), the implicit operator of one Euler step.
inline Eigen::MatrixXcd euler_operator(const ShellParams& params,
                                       const ShellState& u, double dt) {
  Eigen::MatrixXcd M = dt * second_slot_matrix(params, u);
  for (int n = 1; n <= params.n_shells(); ++n) {
    const double kn = params.k(n);
    M(n - 1, n - 1) += 1.0 + dt * params.nu() * kn * kn;
  }
  return M;
}

inline Eigen::VectorXd viscous_rates(const ShellParams& params) {
  Eigen::VectorXd r(params.n_shells());
  for (int n = 1; n <= params.n_shells(); ++n) {
    const double kn = params.k(n);
    r(n - 1) = params.nu() * kn * kn;
  }
  return r;
}

/// One Lawson (integrating-factor) RK4 step for du/dt = -L u + rhs(t, u)
/// with L = diag(rates).
template <class Rhs>
ShellState lawson_rk4_step(const Eigen::VectorXd& rates, const ShellState& u,
                           double t, double dt, Rhs&& rhs) {
  const Eigen::ArrayXd half = (-0.5 * dt * rates.array()).exp();
  const Eigen::ArrayXcd E = half.cast<cplx>();
  const Eigen::ArrayXcd E2 = (half * half).cast<cplx>();
  const ShellState k1 = dt * rhs(t, u);
  const ShellState y2 = (E * (u + 0.5 * k1).array()).matrix();
  const ShellState k2 = dt * rhs(t + 0.5 * dt, y2);
  const ShellState y3 = (E * u.array()).matrix() + 0.5 * k2;
  const ShellState k3 = dt * rhs(t + 0.5 * dt, y3);
  const ShellState y4 = (E2 * u.array() + E * k3.array()).matrix();
  const ShellState k4 = dt * rhs(t + dt, y4);
  return (E2 * u.array() +
          (E2 * k1.array() + 2.0 * E * (k2 + k3).array() + k4.array()) / 6.0)
      .matrix();
}

}  // namespace detail

/// One linearly-implicit Euler step:
///   (I + dt nu A + dt B(u^k, .)) u^{k+1} = u^k + dt * source.
/// The advected field is lagged, the advecting slot is implicit, so
/// Re(B(u^k, u^{k+1}), u^{k+1}) = 0 and the step never creates energy.
inline ShellState euler_step(const ShellParams& params, const ShellState& u,
                             const ShellState& source, double dt) {
  const Eigen::MatrixXcd M = detail::euler_operator(params, u, dt);
  return M.partialPivLu().solve(u + dt * source);
}

inline ShellState rk4_step(const ShellParams& params, const ShellState& u,
                           const ShellState& source, double t, double dt) {
  const Eigen::VectorXd rates = detail::viscous_rates(params);
  return detail::lawson_rk4_step(
      rates, u, t, dt, [&](double, const ShellState& x) -> ShellState {
        return source - nonlinear_B(params, x);
      });
}

inline ShellState advance(const ShellParams& params, Scheme scheme,
                          const ShellState& u, const ShellState& source,
                          double t, double dt) {
  return scheme == Scheme::kSemiImplicitEuler
             ? euler_step(params, u, source, dt)
             : rk4_step(params, u, source, t, dt);
}

/// Integrates du/dt + nu A u + B(u, u) = f + g on the grid.
/// Pass an empty ControlGrid for g = 0.
inline Trajectory simulate(const ShellParams& params, const ShellState& u0,
                           const ForcingSpec& f, const ControlGrid& g,
                           const TimeGrid& grid, Scheme scheme) {
  require_length(params, u0, "simulate(u0)");
  if (!u0.allFinite()) throw InputError("simulate: non-finite initial state");
  f.validate(params, grid);
  const bool has_control = g.n_steps() > 0;
  if (has_control) g.check_shape(grid, params, "simulate");

  Trajectory traj{grid, {}, std::nullopt};
  traj.states.reserve(static_cast<std::size_t>(grid.n_steps()) + 1);
  traj.states.push_back(u0);
  const int N = params.n_shells();
  for (int k = 0; k < grid.n_steps(); ++k) {
    ShellState source = f.at(k, N);
    if (has_control) source += g[k];
    ShellState next =
        advance(params, scheme, traj.states.back(), source, grid.time(k), grid.dt());
    if (!next.allFinite())
      throw BlowUpError(k + 1, "non-finite state (dt too large for this "
                               "viscosity/shell count?)");
    traj.states.push_back(std::move(next));
  }
  if (has_control) traj.applied_control = g;
  return traj;
}

inline Trajectory simulate(const ShellParams& params, const ShellState& u0,
                           const ForcingSpec& f, const TimeGrid& grid,
                           Scheme scheme) {
  return simulate(params, u0, f, ControlGrid{}, grid, scheme);
}

struct Diagnostics {
  std::vector<double> time;
  std::vector<double> energy;     // |u|^2
  std::vector<double> enstrophy;  // |A^{1/2} u|^2
  std::vector<double> helicity;   // |A^{1/4} u|^2
  std::vector<double> spectrum;   // <|u_n|^2> over stored times
};

inline Diagnostics diagnostics(const ShellParams& params, const Trajectory& traj) {
  Diagnostics d;
  const int N = params.n_shells();
  d.spectrum.assign(static_cast<std::size_t>(N), 0.0);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const ShellState& u = traj.states[k];
    d.time.push_back(traj.grid.time(static_cast<int>(k)));
    d.energy.push_back(u.squaredNorm());
    d.enstrophy.push_back(weighted_square(params, u, 0.5));
    d.helicity.push_back(weighted_square(params, u, 0.25));
    for (int n = 0; n < N; ++n) d.spectrum[n] += std::norm(u(n));
  }
  const double count = static_cast<double>(traj.states.size());
  for (auto& s : d.spectrum) s /= count;
  return d;
}

}  // namespace sabra

#endif  // SABRA_INTEGRATOR_HPP
