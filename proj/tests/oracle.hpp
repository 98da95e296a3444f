#pragma once

// Exhaustive oracle for small trees with two-point noise: every tree shape
// and every noise sign is enumerated, giving the exact law of
// sum_{i in G_r*} f(X_i).

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "barlab/bar_sim.hpp"

namespace oracle {

using Atoms = std::vector<std::pair<double, double>>;  // (value, probability)

inline Atoms compact(Atoms a) {
  std::sort(a.begin(), a.end());
  Atoms out;
  for (auto [v, p] : a) {
    if (p == 0.0) continue;
    if (!out.empty() && v - out.back().first <= 1e-13 * std::max(1.0, std::abs(v))) out.back().second += p;
    else out.emplace_back(v, p);
  }
  return out;
}

inline Atoms convolve(const Atoms& a, const Atoms& b) {
  Atoms out;
  for (auto [x, p] : a)
    for (auto [y, q] : b) out.emplace_back(x + y, p * q);
  return compact(out);
}

struct System {
  barlab::OffspringLaw law;
  barlab::BarParams theta;
  double sigma, sigma0, sigma1, rho;
};

/// Law of sum of f over generation `depth` of the subtree rooted at a cell
/// of generation g holding value x.
inline Atoms descend(const System& s, const std::function<double(double)>& f, double x, int g, int depth) {
  if (g == depth) return {{f(x), 1.0}};
  const auto& t = s.theta;
  Atoms out;
  auto add = [&](const Atoms& part, double w) {
    for (auto [v, p] : part) out.emplace_back(v, p * w);
  };
  // both daughters: first sign fair, second agrees with probability (1+rho)/2
  if (s.law.p10 > 0)
    for (int e0 : {-1, 1})
      for (int same : {0, 1}) {
        const double w = s.law.p10 * 0.5 * (same ? 0.5 * (1 + s.rho) : 0.5 * (1 - s.rho));
        const int e1 = same ? e0 : -e0;
        const double y0 = t.alpha0 * x + t.beta0 + e0 * s.sigma;
        const double y1 = t.alpha1 * x + t.beta1 + e1 * s.sigma;
        add(convolve(descend(s, f, y0, g + 1, depth), descend(s, f, y1, g + 1, depth)), w);
      }
  for (int e : {-1, 1}) {
    if (s.law.p0 > 0) add(descend(s, f, t.alpha0p * x + t.beta0p + e * s.sigma0, g + 1, depth), s.law.p0 * 0.5);
    if (s.law.p1 > 0) add(descend(s, f, t.alpha1p * x + t.beta1p + e * s.sigma1, g + 1, depth), s.law.p1 * 0.5);
  }
  const double none = s.law.none_alive();
  if (none > 0) out.emplace_back(0.0, none);
  return compact(out);
}

inline double tail(const Atoms& a, double threshold) {
  double p = 0;
  for (auto [v, q] : a)
    if (v > threshold) p += q;
  return p;
}

inline double distance_to_atoms(const Atoms& a, double threshold) {
  double d = INFINITY;
  for (auto [v, q] : a) d = std::min(d, std::abs(v - threshold));
  return d;
}

/// The reference depth-2 system: law (0.5, 0.25, 0.25), two-point noise.
inline System reference_system() {
  return {{0.5, 0.25, 0.25}, {0.5, 1.0, 0.3, 0.8, 0.4, 0.9, 0.2, 1.1}, 0.5, 0.4, 0.3, 0.2};
}
inline constexpr double kReferenceX1 = 0.3;

inline barlab::NoiseSpec noise_of(const System& s) {
  barlab::NoiseSpec n;
  n.mode = barlab::NoiseMode::TwoPoint;
  n.sigma = s.sigma;
  n.sigma0 = s.sigma0;
  n.sigma1 = s.sigma1;
  n.rho = s.rho;
  return n;
}

/// Exact law of the tilde average of f over G_r*.
inline Atoms tilde_law(const System& s, const std::function<double(double)>& f, double x1, int r) {
  Atoms a = descend(s, f, x1, 0, r);
  const double e = std::pow(s.law.mean(), r);
  for (auto& [v, p] : a) v /= e;
  return a;
}

}  // namespace oracle
