// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_CONSTRAINT_HPP
#define SABRA_CONSTRAINT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sabra/integrator.hpp"
#include "sabra/shell_core.hpp"

namespace sabra {

/// Weighted ball {u : sum_n w_n |u_n|^2 <= rho^2} with w_n = k_n^2 (enstrophy)
/// or w_n = k_n (helicity).
class ConstraintSet {
 public:
  enum class Kind { kEnstrophyBall, kHelicityBall };

  static ConstraintSet make(Kind kind, double rho) {
    if (!(rho > 0.0) || !std::isfinite(rho))
      throw InputError("constraint: rho must be > 0");
    ConstraintSet k;
    k.kind_ = kind;
    k.rho_ = rho;
    return k;
  }
  static ConstraintSet enstrophy_ball(double rho) {
    return make(Kind::kEnstrophyBall, rho);
  }
  static ConstraintSet helicity_ball(double rho) {
    return make(Kind::kHelicityBall, rho);
  }

  Kind kind() const { return kind_; }
  double rho() const { return rho_; }

  /// Exponent s of |A^s u|; the weight is w_n = k_n^{4s}.
  double power() const { return kind_ == Kind::kEnstrophyBall ? 0.5 : 0.25; }

  double weight(const ShellParams& params, int n) const {
    return std::pow(params.k(n), 4.0 * power());
  }
  double square_value(const ShellParams& params, const ShellState& u) const {
    return weighted_square(params, u, power());
  }
  double value(const ShellParams& params, const ShellState& u) const {
    return std::sqrt(square_value(params, u));
  }
  bool contains(const ShellParams& params, const ShellState& u) const {
    return square_value(params, u) <= rho_ * rho_;
  }

 private:
  Kind kind_ = Kind::kEnstrophyBall;
  double rho_ = 1.0;
};

inline std::string_view to_string(ConstraintSet::Kind k) {
  return k == ConstraintSet::Kind::kEnstrophyBall ? "enstrophy_ball"
                                                   : "helicity_ball";
}

inline ConstraintSet::Kind parse_constraint_kind(std::string_view tag) {
  if (tag == "enstrophy_ball") return ConstraintSet::Kind::kEnstrophyBall;
  if (tag == "helicity_ball") return ConstraintSet::Kind::kHelicityBall;
  throw InputError("unknown constraint kind '" + std::string(tag) + "'");
}

/// Characteristic function of a finite set of shells (1-based indices).
class ModeMask {
 public:
  static ModeMask make(std::vector<int> shells, int n_shells) {
    if (shells.empty()) throw InputError("mask: empty mask");
    std::sort(shells.begin(), shells.end());
    shells.erase(std::unique(shells.begin(), shells.end()), shells.end());
    if (shells.front() < 1 || shells.back() > n_shells)
      throw InputError("mask: shell index out of range 1.." +
                       std::to_string(n_shells));
    ModeMask m;
    m.shells_ = std::move(shells);
    return m;
  }
  static ModeMask all(int n_shells) {
    std::vector<int> s(static_cast<std::size_t>(n_shells));
    for (int n = 0; n < n_shells; ++n) s[n] = n + 1;
    return make(std::move(s), n_shells);
  }

  const std::vector<int>& shells() const { return shells_; }

  ShellState apply(const ShellState& u) const {
    ShellState out = ShellState::Zero(u.size());
    for (int n : shells_) out(n - 1) = u(n - 1);
    return out;
  }

 private:
  std::vector<int> shells_;
};

struct PenaltyConfig {
  double penalty_lambda = 1e-2;

  void validate() const {
    if (!(penalty_lambda > 0.0) || !std::isfinite(penalty_lambda))
      throw InputError("penalty: penalty_lambda must be > 0");
  }
};

/// (I + lam A)^{-1} u.
inline ShellState resolvent_A(const ShellParams& params, const ShellState& u,
                              double lam) {
  require_length(params, u, "resolvent_A");
  if (!(lam > 0.0)) throw InputError("resolvent_A: lam must be > 0");
  ShellState out(u.size());
  for (int n = 1; n <= params.n_shells(); ++n) {
    const double kn = params.k(n);
    out(n - 1) = u(n - 1) / (1.0 + lam * kn * kn);
  }
  return out;
}

/// Nearest point of K in the H norm: z_n = u_n / (1 + mu w_n), with mu > 0
/// the root of sum w_n |z_n|^2 = rho^2 when u lies outside K.
inline ShellState project(const ShellParams& params, const ShellState& u,
                          const ConstraintSet& K) {
  require_length(params, u, "project");
  if (K.contains(params, u)) return u;
  const int N = params.n_shells();
  Eigen::ArrayXd w(N), m2(N);
  for (int n = 1; n <= N; ++n) {
    w(n - 1) = K.weight(params, n);
    m2(n - 1) = std::norm(u(n - 1));
  }
  const double rho2 = K.rho() * K.rho();
  auto excess = [&](double mu) {
    return (w * m2 / ((1.0 + mu * w) * (1.0 + mu * w))).sum() - rho2;
  };
  auto slope = [&](double mu) {
    const Eigen::ArrayXd d = 1.0 + mu * w;
    return -2.0 * (w * w * m2 / (d * d * d)).sum();
  };

  double lo = 0.0;
  double hi = 2.0 * std::sqrt(m2.sum()) / (K.rho() * std::sqrt(w.minCoeff()));
  if (!(excess(hi) <= 0.0))
    throw std::logic_error("project: multiplier root is not bracketed");

  // Newton from the left stays left of the root (excess is convex and
  // decreasing); bisection takes over if an iterate leaves the bracket.
  // A u that sits within rounding of the sphere keeps mu = 0.
  double mu = lo;
  for (int it = 0; it < 200 && excess(lo) > 0.0; ++it) {
    const double e = excess(mu);
    if (e > 0.0)
      lo = mu;
    else
      hi = mu;
    if (e == 0.0 || hi - lo <= 1e-15 * hi) break;
    double next = mu - e / slope(mu);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - mu) <= 1e-15 * std::max(1.0, std::abs(mu))) {
      mu = next;
      break;
    }
    mu = next;
  }

  ShellState z(N);
  for (int n = 0; n < N; ++n) z(n) = u(n) / (1.0 + mu * w(n));
  // Last-ulp correction so that membership holds exactly in floating point.
  const double v = K.square_value(params, z);
  if (v > rho2) z *= K.rho() / std::sqrt(v);
  while (!K.contains(params, z)) z *= 1.0 - 4.0 * std::numeric_limits<double>::epsilon();
  return z;
}

/// d_K(x) = |x - P_K x| with x = mask(u), or u when no mask is given.
inline double distance(const ShellParams& params, const ShellState& u,
                       const ConstraintSet& K,
                       const std::optional<ModeMask>& mask = std::nullopt) {
  const ShellState x = mask ? mask->apply(u) : u;
  return (x - project(params, x, K)).norm();
}

struct EnstrophyLaw {
  double band = 1e-3;
  // Clamp to the minimal-norm selection of the normal cone (never pushes
  // outward). Off gives the unclamped Z(u).
  bool minimal_norm = true;
  // Use the complex pairing (f - nu A u - B(u), A u) instead of its real part.
  bool complex_pairing = false;
  // Project back onto K when a discrete step overshoots.
  bool safeguard = true;
};

/// Feedback keeping |A^{1/2} u| <= rho:
///   g = 0                                          if |A^{1/2}u| < rho(1-band)
///   g = -(A u / |A u|^2) Re(f - nu A u - B(u), A u) otherwise.
inline ShellState enstrophy_feedback(const ShellParams& params, const ShellState& u,
                                     const ShellState& f_now, double rho,
                                     const EnstrophyLaw& law = {}) {
  require_length(params, u, "enstrophy_feedback(u)");
  require_length(params, f_now, "enstrophy_feedback(f)");
  if (!(rho > 0.0)) throw InputError("enstrophy_feedback: rho must be > 0");
  const double ens = norm(params, u, NormSpec::enstrophy());
  if (ens < rho * (1.0 - law.band)) return ShellState::Zero(u.size());

  const ShellState Au = apply_A_power(params, u, 1.0);
  const double Au2 = Au.squaredNorm();
  if (!(Au2 > 0.0))
    throw std::logic_error("enstrophy_feedback: zero state on the boundary branch");
  const ShellState drift = f_now - params.nu() * Au - nonlinear_B(params, u);
  cplx c = pairing(drift, Au);
  if (!law.complex_pairing) c = cplx{c.real(), 0.0};
  if (law.minimal_norm && !law.complex_pairing && c.real() < 0.0)
    return ShellState::Zero(u.size());
  return -(c / Au2) * Au;
}

/// g = -(1/lambda) (x - P_K x) on the masked shells, x = mask(u).
inline ShellState penalty_feedback(const ShellParams& params, const ShellState& u,
                                   const ConstraintSet& K, const ModeMask& mask,
                                   const PenaltyConfig& cfg) {
  cfg.validate();
  const ShellState x = mask.apply(u);
  return -(1.0 / cfg.penalty_lambda) * (x - project(params, x, K));
}

struct PenaltyLaw {
  ModeMask mask;
  PenaltyConfig config;
};

using FeedbackLaw = std::variant<EnstrophyLaw, PenaltyLaw>;

struct InvarianceReport {
  double max_excess = 0.0;       // max_k (value(x_k) - rho)_+
  double fraction_inside = 1.0;  // share of grid times with x_k in K
  double integral_d2 = 0.0;      // dt sum_{k>=1} d_K(x_k)^2
  std::optional<double> scaled_integral;  // integral_d2 / penalty_lambda
};

inline InvarianceReport invariance_report(
    const ShellParams& params, const Trajectory& traj, const ConstraintSet& K,
    const std::optional<ModeMask>& mask = std::nullopt,
    std::optional<double> penalty_lambda = std::nullopt) {
  InvarianceReport r;
  int inside = 0;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const ShellState x = mask ? mask->apply(traj.states[k]) : traj.states[k];
    r.max_excess = std::max(r.max_excess, K.value(params, x) - K.rho());
    if (K.contains(params, x)) ++inside;
    if (k > 0) {
      const double d = (x - project(params, x, K)).norm();
      r.integral_d2 += d * d;
    }
  }
  r.integral_d2 *= traj.grid.dt();
  r.fraction_inside = static_cast<double>(inside) / static_cast<double>(traj.states.size());
  if (penalty_lambda) r.scaled_integral = r.integral_d2 / *penalty_lambda;
  return r;
}

struct ClosedLoopResult {
  Trajectory trajectory;  // applied_control is set
  InvarianceReport report;
  double max_raw_excess = 0.0;  // before the post-step safeguard
  int safeguard_projections = 0;
  double commutation_defect = 0.0;  // max |P_K(m u) - m P_K(u)| (penalty law)
};

/// Steps the closed loop du/dt + nu A u + B(u) = f + g(u).
///
/// Enstrophy law: with implicit Euler g is evaluated at the start of each
/// step; with RK4 it is re-evaluated at every stage and the stored control is
/// the stage-weighted mean. An overshooting step is projected back onto K and
/// the projection is booked into g.
/// Penalty law: the free step is followed by the relaxation
/// x <- x + theta (P_K x - x) on the masked shells, theta = min(dt/lambda, 1),
/// which is the stiff penalty -(1/lambda)(x - P_K x) applied by splitting.
inline ClosedLoopResult simulate_closed_loop(const ShellParams& params,
                                             const ShellState& u0,
                                             const ForcingSpec& f,
                                             const FeedbackLaw& law,
                                             const ConstraintSet& K,
                                             const TimeGrid& grid, Scheme scheme) {
  require_length(params, u0, "simulate_closed_loop(u0)");
  f.validate(params, grid);
  const auto* enstrophy = std::get_if<EnstrophyLaw>(&law);
  const auto* penalty = std::get_if<PenaltyLaw>(&law);
  if (enstrophy && K.kind() != ConstraintSet::Kind::kEnstrophyBall)
    throw InputError("closed loop: the enstrophy law needs an enstrophy ball");
  // Initial membership is checked up to rounding of a state scaled onto the sphere.
  constexpr double kMembershipSlack = 1e-12;
  if (enstrophy && K.value(params, u0) > K.rho() * (1.0 + kMembershipSlack))
    throw InputError("closed loop: initial state must lie in K");
  if (penalty) {
    penalty->config.validate();
    if (K.value(params, penalty->mask.apply(u0)) > K.rho() * (1.0 + kMembershipSlack))
      throw InputError("closed loop: masked initial state must lie in K");
  }

  const int N = params.n_shells();
  const double dt = grid.dt();
  ClosedLoopResult out;
  Trajectory& traj = out.trajectory;
  traj.grid = grid;
  traj.states.reserve(static_cast<std::size_t>(grid.n_steps()) + 1);
  traj.states.push_back(u0);
  ControlGrid control(grid.n_steps(), N);
  const Eigen::VectorXd rates = detail::viscous_rates(params);

  for (int k = 0; k < grid.n_steps(); ++k) {
    const ShellState& u = traj.states.back();
    const ShellState fk = f.at(k, N);
    ShellState next;
    if (enstrophy) {
      ShellState g;
      if (scheme == Scheme::kSemiImplicitEuler) {
        g = enstrophy_feedback(params, u, fk, K.rho(), *enstrophy);
        next = euler_step(params, u, fk + g, dt);
      } else {
        g = ShellState::Zero(N);
        int stage = 0;
        next = detail::lawson_rk4_step(
            rates, u, grid.time(k), dt, [&](double, const ShellState& x) -> ShellState {
              const ShellState gs = enstrophy_feedback(params, x, fk, K.rho(), *enstrophy);
              g += (stage == 0 || stage == 3 ? 1.0 / 6.0 : 1.0 / 3.0) * gs;
              ++stage;
              return fk + gs - nonlinear_B(params, x);
            });
      }
      if (!next.allFinite()) throw BlowUpError(k + 1, "closed loop");
      out.max_raw_excess =
          std::max(out.max_raw_excess, K.value(params, next) - K.rho());
      if (enstrophy->safeguard && !K.contains(params, next)) {
        const ShellState z = project(params, next, K);
        g += (z - next) / dt;
        next = z;
        ++out.safeguard_projections;
      }
      control[k] = g;
    } else {
      const ModeMask& mask = penalty->mask;
      next = advance(params, scheme, u, fk, grid.time(k), dt);
      if (!next.allFinite()) throw BlowUpError(k + 1, "closed loop");
      const ShellState x = mask.apply(next);
      out.max_raw_excess = std::max(out.max_raw_excess, K.value(params, x) - K.rho());
      const double theta = std::min(dt / penalty->config.penalty_lambda, 1.0);
      const ShellState correction = theta * (project(params, x, K) - x);
      next += correction;
      control[k] = correction / dt;
      const ShellState pm = project(params, mask.apply(next), K);
      const ShellState mp = mask.apply(project(params, next, K));
      out.commutation_defect = std::max(out.commutation_defect, (pm - mp).norm());
    }
    traj.states.push_back(std::move(next));
  }
  out.max_raw_excess = std::max(0.0, out.max_raw_excess);
  traj.applied_control = std::move(control);

  if (enstrophy) {
    out.report = invariance_report(params, traj, K);
  } else {
    out.report = invariance_report(params, traj, K, penalty->mask,
                                   penalty->config.penalty_lambda);
  }
  return out;
}

}  // namespace sabra

#endif  // SABRA_CONSTRAINT_HPP
