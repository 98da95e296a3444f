#pragma once

// Regime classification and closed-form deviation bounds.
//
// Bounds are carried as natural logarithms: for deep generations the values
// fall far below the smallest double, while their logs stay ordinary
// numbers. `Bound::value()` exponentiates on demand.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/tree_statistics.hpp"

namespace barlab {

/// Constants of the deviation inequalities. They are existential in the
/// statements, so every one of them is an explicit input.
struct BoundConstants {
  double c = 1.0;         // geometric ergodicity constant of Q
  double c_prime = 1.0;   // c'
  double c_dprime = 1.0;  // c''
  double c0 = 1.0;        // scale of the threshold r0
  int k0 = 0;             // r0 offset, 0 or 1
  double c1 = 1.0;        // caps gamma
  double c2 = 1.0;        // prefactor of the estimator bound
  double c3 = 1.0;        // prefactor of its tree term
  double p = 1.0;         // exponent of delta, 1/2 or 1
  double q = 1.0;         // exponent of gamma, 0, 1/2 or 1
  double a = 1.0;         // conditioning level for W
  double b = 0.1;         // delta multiplier, must satisfy b < a/(delta+1)
  double gamma = 0.1;     // lower level for B_n

  void validate() const {
    for (double v : {c, c_prime, c_dprime, c0, c1, c2, c3, a, b, gamma})
      if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("constants: every constant must be finite and > 0");
    if (k0 != 0 && k0 != 1) throw InvalidArgument("constants: k0 must be 0 or 1");
    if (p != 0.5 && p != 1.0) throw InvalidArgument("constants: p must be 1/2 or 1");
    if (q != 0.0 && q != 0.5 && q != 1.0) throw InvalidArgument("constants: q must be 0, 1/2 or 1");
  }
};

enum class Regime { SubUnit, UnitBoundary, Intermediate, Sqrt2Boundary, SuperSqrt2 };

inline const char* regime_name(Regime r) noexcept {
  switch (r) {
    case Regime::SubUnit: return "SubUnit";
    case Regime::UnitBoundary: return "UnitBoundary";
    case Regime::Intermediate: return "Intermediate";
    case Regime::Sqrt2Boundary: return "Sqrt2Boundary";
    case Regime::SuperSqrt2: return "SuperSqrt2";
  }
  return "?";
}

inline constexpr double kRegimeTolerance = 1e-9;

inline void require_h2(double m) {
  if (!(m > std::numbers::sqrt2))
    throw HypothesisViolation("H2", "m > sqrt(2) is required, got m = " + std::to_string(m));
}

/// Five-way split of m * alpha against 1 and sqrt(2); the two boundaries are
/// matched with relative tolerance 1e-9.
inline Regime classify_regime(double m, double alpha) {
  require_h2(m);
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("classify_regime: alpha must lie in [0,1)");
  const double x = m * alpha;
  if (std::abs(x - 1.0) <= kRegimeTolerance) return Regime::UnitBoundary;
  if (std::abs(x - std::numbers::sqrt2) <= kRegimeTolerance * std::numbers::sqrt2) return Regime::Sqrt2Boundary;
  if (x < 1.0) return Regime::SubUnit;
  if (x < std::numbers::sqrt2) return Regime::Intermediate;
  return Regime::SuperSqrt2;
}

/// (m^2/2)^r for generations, (m^2/2)^{r+1} for trees.
inline double h_r(double m, int r, SetKind kind) {
  require_h2(m);
  if (r < 0) throw InvalidArgument("h_r: negative generation");
  return std::pow(m * m / 2.0, kind == SetKind::Generation ? r : r + 1);
}

/// log(delta / c0) / log(alpha) - k0. Negative means "every r".
inline double r0_threshold(double delta, double alpha, const BoundConstants& k) {
  if (!(delta > 0.0)) throw InvalidArgument("r0_threshold: delta must be > 0");
  if (!(k.c0 > 0.0)) throw InvalidArgument("r0_threshold: c0 must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("r0_threshold: alpha must lie in (0,1)");
  return std::log(delta / k.c0) / std::log(alpha) - k.k0;
}

struct Bound {
  double log_value = 0.0;
  double value() const noexcept { return std::exp(log_value); }
};

/// log(e^x + e^y).
inline double log_add(double x, double y) noexcept {
  const double hi = std::max(x, y), lo = std::min(x, y);
  return hi + std::log1p(std::exp(lo - hi));
}
inline Bound operator+(Bound x, Bound y) noexcept { return {log_add(x.log_value, y.log_value)}; }

/// t_r = 1 + m + ... + m^r.
inline double cumulative_expected_size(double m, int r) {
  double t = 0.0, p = 1.0;
  for (int q = 0; q <= r; ++q, p *= m) t += p;
  return t;
}

namespace detail {

/// Mean-zero bound for deviation level d (already multiplied by b where the
/// caller conditions on W). nullopt when r is at or below the threshold.
inline std::optional<Bound> centered_log(double d, int r, double m, double alpha, SetKind kind,
                                         const BoundConstants& k) {
  const Regime reg = classify_regime(m, alpha);
  const double cp = k.c_prime, cpp = k.c_dprime;
  const double h = h_r(m, r, kind);
  auto above_threshold = [&] { return static_cast<double>(r) > r0_threshold(d, alpha, k); };
  switch (reg) {
    case Regime::SubUnit: return Bound{cpp * d - cp * d * d * h};
    case Regime::UnitBoundary:
      if (kind == SetKind::Generation) return Bound{cpp * d - cp * d * d * h};
      return Bound{cpp * d * (r + 1) - cp * d * d * h};
    case Regime::Intermediate:
      if (!above_threshold()) return std::nullopt;
      return Bound{-cp * d * d * h};
    case Regime::Sqrt2Boundary:
      if (r < 1 || !above_threshold()) return std::nullopt;
      return Bound{-cp * d * d * h / r};
    case Regime::SuperSqrt2:
      if (r < 1 || !above_threshold()) return std::nullopt;
      return Bound{-cp * d * d / std::pow(alpha, 2.0 * r)};
  }
  return std::nullopt;
}

inline Bound tree_term_log(double d, int r, double m, SetKind kind, const BoundConstants& k) {
  const double d23 = std::cbrt(d * d);
  if (kind == SetKind::Generation)
    return Bound{std::log(k.c_prime) - k.c_dprime * d23 * std::pow(m, r / 3.0)};
  const double t = cumulative_expected_size(m, r) / ((r + 1.0) * (r + 1.0));
  return Bound{k.c_prime * d23 - k.c_dprime * d23 * std::cbrt(t)};
}

inline void require_positive_delta(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("bound: delta must be finite and > 0");
}
inline void require_generation(int r) {
  if (r < 0) throw InvalidArgument("bound: negative generation");
}

}  // namespace detail

/// Bound on P(M~_{H_r*}(f) > delta) for a mean-zero f; nullopt when the
/// regime's threshold r > r0 (and r >= 1 where required) is not met.
inline std::optional<Bound> bound_centered(double delta, int r, double m, double alpha, SetKind kind,
                                           const BoundConstants& k) {
  detail::require_positive_delta(delta);
  detail::require_generation(r);
  k.validate();
  return detail::centered_log(delta, r, m, alpha, kind, k);
}

inline void require_h3(const OffspringLaw& law) {
  if (!law.h3()) throw HypothesisViolation("H3", "p10 + p0 + p1 = 1 is required");
}

/// The tree-fluctuation term A_r.
inline Bound a_r_term(double delta, int r, const OffspringLaw& law, SetKind kind, const BoundConstants& k) {
  detail::require_positive_delta(delta);
  detail::require_generation(r);
  require_h3(law);
  k.validate();
  return detail::tree_term_log(delta, r, law.mean(), kind, k);
}

/// Bound on P(M~_{H_r*}(f) - <mu,f> W > delta): mean-zero bound plus A_r at
/// the same delta.
inline std::optional<Bound> bound_uncentered(double delta, int r, const OffspringLaw& law, double alpha,
                                             SetKind kind, const BoundConstants& k) {
  require_h3(law);
  auto main = bound_centered(delta, r, law.mean(), alpha, kind, k);
  if (!main) return std::nullopt;
  return *main + a_r_term(delta, r, law, kind, k);
}

inline void require_conditioning(double delta, const BoundConstants& k) {
  if (!(k.b < k.a / (delta + 1.0)))
    throw InvalidArgument("conditioning constraint b < a/(delta+1) violated (b = " + std::to_string(k.b) +
                          ", a/(delta+1) = " + std::to_string(k.a / (delta + 1.0)) + ")");
}

/// Bound on P(M-bar_{H_r*}(f) - <mu,f> > delta | W >= a): delta replaced by
/// delta * b throughout, plus A_r(delta * b).
inline std::optional<Bound> bound_conditional(double delta, int r, const OffspringLaw& law, double alpha,
                                              SetKind kind, const BoundConstants& k) {
  detail::require_positive_delta(delta);
  detail::require_generation(r);
  require_h3(law);
  k.validate();
  require_conditioning(delta, k);
  const double d = delta * k.b;
  auto main = detail::centered_log(d, r, law.mean(), alpha, kind, k);
  if (!main) return std::nullopt;
  return *main + detail::tree_term_log(d, r, law.mean(), kind, k);
}

inline void require_gamma(double delta, const BoundConstants& k) {
  const double cap = std::min(k.c1 / (1.0 + delta), k.c1 / (1.0 + std::sqrt(delta)));
  if (!(k.gamma < cap))
    throw InvalidArgument("estimator constraint gamma < min(c1/(1+delta), c1/(1+sqrt(delta))) violated (gamma = " +
                          std::to_string(k.gamma) + ", cap = " + std::to_string(cap) + ")");
}

/// Bound on P(||theta-hat_n - theta|| > delta | W >= a). Every case works
/// with the level x = gamma^q delta^p b and the threshold
/// n0 = log(x/c0)/log(alpha) - 1.
inline std::optional<Bound> bound_theta(double delta, int n, double m, double alpha, const BoundConstants& k) {
  detail::require_positive_delta(delta);
  detail::require_generation(n);
  k.validate();
  require_conditioning(delta, k);
  require_gamma(delta, k);
  const Regime reg = classify_regime(m, alpha);
  const double x = std::pow(k.gamma, k.q) * std::pow(delta, k.p) * k.b;
  const double cp = k.c_prime, cpp = k.c_dprime;
  const double H = std::pow(m * m / 2.0, n + 1);
  auto above_threshold = [&] {
    return static_cast<double>(n) > std::log(x / k.c0) / std::log(alpha) - 1.0;
  };
  std::optional<Bound> main;
  switch (reg) {
    case Regime::SubUnit: main = Bound{std::log(k.c2) + cpp * x - cp * x * x * H}; break;
    case Regime::UnitBoundary: main = Bound{std::log(k.c2) + cpp * x * (n + 1) - cp * x * x * H}; break;
    case Regime::Intermediate:
      if (above_threshold()) main = Bound{std::log(k.c2) - cp * x * x * H};
      break;
    case Regime::Sqrt2Boundary:
      if (n >= 1 && above_threshold()) main = Bound{std::log(k.c2) - cp * x * x * H / n};
      break;
    case Regime::SuperSqrt2:
      if (n >= 1 && above_threshold()) main = Bound{std::log(k.c2) - cp * x * x / std::pow(alpha, 2.0 * n)};
      break;
  }
  if (!main) return std::nullopt;
  const double x23 = std::cbrt(x * x);
  const double t = cumulative_expected_size(m, n) / ((n + 1.0) * (n + 1.0));
  const Bound tree{std::log(k.c3) + cp * x23 - cpp * x23 * std::cbrt(t)};
  return *main + tree;
}

/// Largest c' for which bound_centered at (delta, r) is still >= `prob`
/// (the log-bound is affine and decreasing in c'). nullopt when the bound is
/// inapplicable there or prob is not in (0, 1].
inline std::optional<BoundConstants> calibrate_c_prime(double prob, double delta, int r, double m, double alpha,
                                                       SetKind kind, BoundConstants k) {
  if (!(prob > 0.0 && prob <= 1.0)) return std::nullopt;
  k.c_prime = 1.0;
  auto at1 = bound_centered(delta, r, m, alpha, kind, k);
  k.c_prime = 2.0;
  auto at2 = bound_centered(delta, r, m, alpha, kind, k);
  if (!at1 || !at2) return std::nullopt;
  const double slope = at1->log_value - at2->log_value;  // decrease per unit of c'
  const double intercept = at1->log_value + slope;       // log-bound at c' = 0
  if (!(slope > 0.0)) return std::nullopt;
  const double c = (intercept - std::log(prob)) / slope;
  if (!(c > 0.0)) return std::nullopt;
  k.c_prime = c;
  return k;
}

}  // namespace barlab
