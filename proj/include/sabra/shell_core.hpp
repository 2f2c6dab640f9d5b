// Copyright 2026 The sabra-control Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SABRA_SHELL_CORE_HPP
#define SABRA_SHELL_CORE_HPP

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sabra {

using cplx = std::complex<double>;

/// Complex shell amplitudes (u_1, ..., u_N). Index 0 holds shell n = 1.
using ShellState = Eigen::VectorXcd;

/// Raised for malformed or out-of-range inputs.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Physical and spectral constants of the truncated sabra model.
///
/// The interaction coefficients satisfy a + b + c = 0; `make` derives c from
/// a and b when it is not given and rejects inconsistent triples.
class ShellParams {
 public:
  static constexpr double kDefaultK0 = 1.0;
  static constexpr double kDefaultLambda = 2.0;
  static constexpr double kDefaultA = 1.0;
  static constexpr double kDefaultB = -0.5;
  static constexpr double kDefaultNu = 0.01;

  static ShellParams make(int n_shells, double k0 = kDefaultK0,
                          double lambda = kDefaultLambda, double a = kDefaultA,
                          double b = kDefaultB, double nu = kDefaultNu) {
    return make(n_shells, k0, lambda, a, b, -a - b, nu);
  }

  static ShellParams make(int n_shells, double k0, double lambda, double a,
                          double b, double c, double nu) {
    if (n_shells < 1) throw InputError("n_shells must be >= 1");
    if (!(k0 > 0.0) || !std::isfinite(k0)) throw InputError("k0 must be > 0");
    if (!(lambda > 1.0) || !std::isfinite(lambda))
      throw InputError("lambda must be > 1");
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw InputError("nu must be >= 0");
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c))
      throw InputError("a, b, c must be finite");
    const double scale = std::max({1.0, std::abs(a), std::abs(b), std::abs(c)});
    if (std::abs(a + b + c) > 1e-12 * scale)
      throw InputError("a+b+c=0 violated (a=" + std::to_string(a) +
                       ", b=" + std::to_string(b) + ", c=" + std::to_string(c) +
                       ")");
    ShellParams p;
    p.n_shells_ = n_shells;
    p.k0_ = k0;
    p.lambda_ = lambda;
    p.a_ = a;
    p.b_ = b;
    p.c_ = c;
    p.nu_ = nu;
    return p;
  }

  int n_shells() const { return n_shells_; }
  double k0() const { return k0_; }
  double lambda() const { return lambda_; }
  double a() const { return a_; }
  double b() const { return b_; }
  double c() const { return c_; }
  double nu() const { return nu_; }

  /// k_n = k0 * lambda^n for any integer n (n may lie outside 1..N).
  double k(int n) const { return k0_ * std::pow(lambda_, n); }

  ShellParams with_nu(double nu) const {
    return make(n_shells_, k0_, lambda_, a_, b_, c_, nu);
  }
  ShellParams with_shells(int n) const {
    return make(n, k0_, lambda_, a_, b_, c_, nu_);
  }

  // Constants of the continuity bounds for B.
  double c1() const {
    return std::abs(a_) * (1.0 / lambda_ + lambda_) +
           std::abs(b_) * (1.0 / lambda_ + 1.0);
  }
  double c2() const { return 2.0 * std::abs(a_) + 2.0 * lambda_ * std::abs(b_); }
  double c3() const {
    const double l = lambda_;
    return std::abs(a_) * (l * l * l + 1.0 / (l * l * l)) +
           std::abs(b_) * (l + 1.0 / (l * l));
  }

 private:
  ShellParams() = default;
  int n_shells_ = 0;
  double k0_ = kDefaultK0;
  double lambda_ = kDefaultLambda;
  double a_ = kDefaultA;
  double b_ = kDefaultB;
  double c_ = -kDefaultA - kDefaultB;
  double nu_ = kDefaultNu;
};

/// Sobolev-type norm selector: ||A^{m/2} u||_p, p = infinity allowed.
struct NormSpec {
  double m = 0.0;
  double p = 2.0;

  static NormSpec energy() { return {0.0, 2.0}; }
  static NormSpec enstrophy() { return {1.0, 2.0}; }
  static NormSpec helicity() { return {0.5, 2.0}; }
};

inline Eigen::VectorXd wavenumbers(const ShellParams& params) {
  Eigen::VectorXd k(params.n_shells());
  for (int n = 1; n <= params.n_shells(); ++n) k(n - 1) = params.k(n);
  return k;
}

inline void require_length(const ShellParams& params, const ShellState& u,
                           const char* what) {
  if (u.size() != params.n_shells())
    throw InputError(std::string(what) + ": expected length " +
                     std::to_string(params.n_shells()) + ", got " +
                     std::to_string(u.size()));
}

inline bool all_finite(const ShellState& u) {
  return u.allFinite();
}

/// Component n becomes k_n^{2s} u_n.
inline ShellState apply_A_power(const ShellParams& params, const ShellState& u,
                                double s) {
  require_length(params, u, "apply_A_power");
  ShellState out(u.size());
  for (int n = 1; n <= params.n_shells(); ++n)
    out(n - 1) = std::pow(params.k(n), 2.0 * s) * u(n - 1);
  return out;
}

inline double norm(const ShellParams& params, const ShellState& u,
                   const NormSpec& spec) {
  require_length(params, u, "norm");
  if (!(spec.p >= 1.0)) throw InputError("norm: p must be >= 1");
  const bool sup = std::isinf(spec.p);
  double acc = 0.0;
  for (int n = 1; n <= params.n_shells(); ++n) {
    const double x = std::pow(params.k(n), spec.m) * std::abs(u(n - 1));
    if (sup)
      acc = std::max(acc, x);
    else if (spec.p == 2.0)
      acc += x * x;
    else
      acc += std::pow(x, spec.p);
  }
  if (sup) return acc;
  if (spec.p == 2.0) return std::sqrt(acc);
  return std::pow(acc, 1.0 / spec.p);
}

/// |A^s u|^2 = sum_n k_n^{4s} |u_n|^2. Used for enstrophy (s=1/2) and
/// helicity-norm (s=1/4) squares without the square-root round trip.
inline double weighted_square(const ShellParams& params, const ShellState& u,
                              double s) {
  double acc = 0.0;
  for (int n = 1; n <= params.n_shells(); ++n)
    acc += std::pow(params.k(n), 4.0 * s) * std::norm(u(n - 1));
  return acc;
}

/// Complex pairing (x, y) = sum x_n conj(y_n).
inline cplx pairing(const ShellState& x, const ShellState& y) {
  return y.dot(x);  // Eigen conjugates the left operand.
}

/// Real inner product Re(x, y) on the 2N-dimensional real coordinate space.
inline double real_inner(const ShellState& x, const ShellState& y) {
  return std::real(y.dot(x));
}

namespace detail {
// Zero-padded access with 1-based shell index.
inline cplx at(const ShellState& u, int n) {
  return (n >= 1 && n <= u.size()) ? u(n - 1) : cplx{0.0, 0.0};
}
}  // namespace detail

/// B(u, v)_n = -i (a k_{n+1} v_{n+2} u*_{n+1} + b k_n v_{n+1} u*_{n-1}
///               + a k_{n-1} u_{n-1} v_{n-2} + b k_{n-1} v_{n-1} u_{n-2}),
/// with amplitudes outside 1..N treated as zero.
inline ShellState bilinear_B(const ShellParams& params, const ShellState& u,
                             const ShellState& v) {
  require_length(params, u, "bilinear_B(u)");
  require_length(params, v, "bilinear_B(v)");
  using detail::at;
  const double a = params.a(), b = params.b();
  const cplx minus_i{0.0, -1.0};
  ShellState out(params.n_shells());
  for (int n = 1; n <= params.n_shells(); ++n) {
    const cplx s = a * params.k(n + 1) * at(v, n + 2) * std::conj(at(u, n + 1)) +
                   b * params.k(n) * at(v, n + 1) * std::conj(at(u, n - 1)) +
                   a * params.k(n - 1) * at(u, n - 1) * at(v, n - 2) +
                   b * params.k(n - 1) * at(v, n - 1) * at(u, n - 2);
    out(n - 1) = minus_i * s;
  }
  return out;
}

/// B(u) = B(u, u), evaluated through the c-coefficient form of the model.
inline ShellState nonlinear_B(const ShellParams& params, const ShellState& u) {
  require_length(params, u, "nonlinear_B");
  using detail::at;
  const double a = params.a(), b = params.b(), c = params.c();
  const cplx minus_i{0.0, -1.0};
  ShellState out(params.n_shells());
  for (int n = 1; n <= params.n_shells(); ++n) {
    const cplx s = a * params.k(n + 1) * at(u, n + 2) * std::conj(at(u, n + 1)) +
                   b * params.k(n) * at(u, n + 1) * std::conj(at(u, n - 1)) -
                   c * params.k(n - 1) * at(u, n - 1) * at(u, n - 2);
    out(n - 1) = minus_i * s;
  }
  return out;
}

/// b(u, v, w) = (B(u, v), w).
inline cplx trilinear_b(const ShellParams& params, const ShellState& u,
                        const ShellState& v, const ShellState& w) {
  require_length(params, w, "trilinear_b(w)");
  return pairing(bilinear_B(params, u, v), w);
}

/// B'(u) v = B(u, v) + B(v, u).
inline ShellState linearize_B(const ShellParams& params, const ShellState& base,
                              const ShellState& v) {
  return bilinear_B(params, base, v) + bilinear_B(params, v, base);
}

/// Real-adjoint of the first slot: returns C with Re(B(v, u), w) = Re(v, C)
/// for every v. B(., u) carries conjugations, so C is conjugate-linear in w.
inline ShellState first_slot_adjoint(const ShellParams& params,
                                     const ShellState& u, const ShellState& w) {
  require_length(params, u, "first_slot_adjoint(u)");
  require_length(params, w, "first_slot_adjoint(w)");
  using detail::at;
  const double a = params.a(), b = params.b();
  const cplx i{0.0, 1.0};
  ShellState out(params.n_shells());
  for (int m = 1; m <= params.n_shells(); ++m) {
    const double km = params.k(m), km1 = params.k(m + 1);
    const cplx s = -a * km * at(u, m + 1) * std::conj(at(w, m - 1)) -
                   b * km1 * at(u, m + 2) * std::conj(at(w, m + 1)) +
                   a * km * std::conj(at(u, m - 1)) * at(w, m + 1) +
                   b * km1 * std::conj(at(u, m + 1)) * at(w, m + 2);
    out(m - 1) = i * s;
  }
  return out;
}

/// Real-adjoint of v -> B'(base) v under Re(x, y):
///   Re(B'(u) v, w) = Re(v, adjoint_linearize_B(u, w)).
/// The second-slot part is -B(u, w) (energy orthogonality); the first-slot
/// part is the exact transpose of v -> B(v, u).
inline ShellState adjoint_linearize_B(const ShellParams& params,
                                      const ShellState& base,
                                      const ShellState& w) {
  return -bilinear_B(params, base, w) + first_slot_adjoint(params, base, w);
}

}  // namespace sabra

#endif  // SABRA_SHELL_CORE_HPP
