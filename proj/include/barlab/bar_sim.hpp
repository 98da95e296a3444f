#pragma once

// First-order bifurcating autoregressive process with missing data.

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/random.hpp"

namespace barlab {

/// theta = (alpha0, beta0, alpha1, beta1, alpha0', beta0', alpha1', beta1').
/// Unprimed pairs drive the daughters of a cell whose two daughters live;
/// primed pairs drive a lone new-pole (0) or old-pole (1) daughter.
struct BarParams {
  double alpha0 = 0, beta0 = 0, alpha1 = 0, beta1 = 0;
  double alpha0p = 0, beta0p = 0, alpha1p = 0, beta1p = 0;

  static constexpr std::array<const char*, 8> kNames = {
      "alpha0", "beta0", "alpha1", "beta1", "alpha0p", "beta0p", "alpha1p", "beta1p"};

  std::array<double, 8> as_array() const noexcept {
    return {alpha0, beta0, alpha1, beta1, alpha0p, beta0p, alpha1p, beta1p};
  }
  static BarParams from_array(const std::array<double, 8>& a) noexcept {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }

  double max_abs_slope() const noexcept {
    return std::max({std::abs(alpha0), std::abs(alpha1), std::abs(alpha0p), std::abs(alpha1p)});
  }
  double max_abs_intercept() const noexcept {
    return std::max({std::abs(beta0), std::abs(beta1), std::abs(beta0p), std::abs(beta1p)});
  }

  void validate() const {
    for (double v : as_array())
      if (!std::isfinite(v)) throw InvalidArgument("bar params: non-finite value");
    if (!(max_abs_slope() < 1.0))
      throw InvalidArgument("bar params: every |alpha| must be strictly below 1");
  }
};

enum class NoiseMode {
  Gaussian,   // truncated Gaussian, rejection at trunc_k standard deviations
  TwoPoint,   // +-sigma with equal probability; pairs agree in sign w.p. (1+rho)/2
  Noiseless,  // all noises exactly zero
};

struct NoiseSpec {
  double sigma = 1.0;   // pair noise standard deviation
  double rho = 0.0;     // pair noise correlation
  double sigma0 = 1.0;  // lone new-pole daughter
  double sigma1 = 1.0;  // lone old-pole daughter
  double trunc_k = 4.0;
  NoiseMode mode = NoiseMode::Gaussian;

  void validate() const {
    if (!(sigma > 0.0) || !(sigma0 > 0.0) || !(sigma1 > 0.0))
      throw InvalidArgument("noise: sigma, sigma0 and sigma1 must be > 0");
    if (!(rho > -1.0 && rho < 1.0))
      throw InvalidArgument("noise: |rho| < 1 is required for Gamma to be positive definite");
    if (!(trunc_k > 0.0) || !std::isfinite(trunc_k))
      throw InvalidArgument("noise: trunc_k must be a positive finite number");
  }

  /// Largest |noise| a draw with standard deviation s can produce.
  double radius(double s) const noexcept {
    switch (mode) {
      case NoiseMode::Gaussian: return trunc_k * s;
      case NoiseMode::TwoPoint: return s;
      case NoiseMode::Noiseless: return 0.0;
    }
    return 0.0;
  }
};

/// Law of X_1: a point mass or a uniform law on [lo, hi].
struct InitialLaw {
  enum class Kind { Point, Uniform } kind = Kind::Point;
  double lo = 0.0;
  double hi = 0.0;

  static InitialLaw point(double x) { return {Kind::Point, x, x}; }
  static InitialLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }

  void validate() const {
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
      throw InvalidArgument("initial law: need finite lo <= hi");
    if (kind == Kind::Point && lo != hi) throw InvalidArgument("initial law: point mass with lo != hi");
  }
  double abs_max() const noexcept { return std::max(std::abs(lo), std::abs(hi)); }
  double draw(Rng& rng) const noexcept {
    const double u = rng.uniform();
    return kind == Kind::Point ? lo : lo + (hi - lo) * u;
  }
};

inline constexpr long kRejectionCap = 1'000'000;

/// Centered normal with standard deviation s, truncated to [-k s, k s].
inline double sample_truncated_normal(double s, double k, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long it = 0; it < kRejectionCap; ++it) {
    const double z = normal(rng);
    if (std::abs(z) <= k) return s * z;
  }
  throw std::logic_error("truncated normal: rejection cap reached");
}

/// One noise for a lone daughter with standard deviation s.
inline double sample_single_noise(const NoiseSpec& noise, double s, Rng& rng) {
  switch (noise.mode) {
    case NoiseMode::Gaussian: return sample_truncated_normal(s, noise.trunc_k, rng);
    case NoiseMode::TwoPoint: return (rng() >> 63) ? s : -s;
    case NoiseMode::Noiseless: return 0.0;
  }
  return 0.0;
}

/// Correlated pair with covariance sigma^2 [[1, rho], [rho, 1]].
///
/// Gaussian mode draws from the bivariate normal and rejects until both
/// coordinates lie within trunc_k * sigma.
inline std::pair<double, double> sample_pair_noise(const NoiseSpec& noise, Rng& rng) {
  const double s = noise.sigma;
  switch (noise.mode) {
    case NoiseMode::Gaussian: {
      std::normal_distribution<double> normal(0.0, 1.0);
      const double c = std::sqrt(1.0 - noise.rho * noise.rho);
      const double k = noise.trunc_k;
      for (long it = 0; it < kRejectionCap; ++it) {
        const double z1 = normal(rng);
        const double z2 = noise.rho * z1 + c * normal(rng);
        if (std::abs(z1) <= k && std::abs(z2) <= k) return {s * z1, s * z2};
      }
      throw std::logic_error("pair noise: rejection cap reached");
    }
    case NoiseMode::TwoPoint: {
      const double first = (rng() >> 63) ? s : -s;
      const bool same = rng.uniform() < 0.5 * (1.0 + noise.rho);
      return {first, same ? first : -first};
    }
    case NoiseMode::Noiseless: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

/// Bound B with |X_i| <= B for every simulated value.
inline double state_bound(const BarParams& params, const NoiseSpec& noise, const InitialLaw& init) {
  const double noise_max =
      std::max({noise.radius(noise.sigma), noise.radius(noise.sigma0), noise.radius(noise.sigma1)});
  return (params.max_abs_intercept() + noise_max + init.abs_max()) / (1.0 - params.max_abs_slope());
}

/// A tree with one growth rate per alive cell, aligned with tree.nodes().
struct PopulationSample {
  GwTree tree;
  std::vector<double> values;

  double value(Label label) const {
    auto i = tree.index_of(label);
    if (!i) throw InvalidArgument("sample: label " + std::to_string(label) + " is not alive");
    return values[*i];
  }
  std::optional<double> value_if_alive(Label label) const noexcept {
    auto i = tree.index_of(label);
    if (!i) return std::nullopt;
    return values[*i];
  }
};

/// Daughters of one mother: X_i, then X_{2i} and X_{2i+1} or nullopt for dead.
struct Triangle {
  double mother = 0.0;
  std::optional<double> new_daughter;
  std::optional<double> old_daughter;
};

inline Kind triangle_kind(const Triangle& t) noexcept {
  if (t.new_daughter && t.old_daughter) return Kind::BothAlive;
  if (t.new_daughter) return Kind::NewOnly;
  if (t.old_daughter) return Kind::OldOnly;
  return Kind::NoneAlive;
}

inline Triangle triangle(const PopulationSample& sample, Label i) {
  auto idx = sample.tree.index_of(i);
  if (!idx) throw InvalidArgument("triangle: cell " + std::to_string(i) + " is not alive");
  if (generation_of(i) >= sample.tree.max_depth())
    throw InvalidArgument("triangle: daughters of cell " + std::to_string(i) + " are not observed");
  Triangle t;
  t.mother = sample.values[*idx];
  t.new_daughter = sample.value_if_alive(2 * i);
  t.old_daughter = sample.value_if_alive(2 * i + 1);
  return t;
}

/// Simulate X on the alive cells of `tree`.
///
/// Draw contract: one 64-bit draw from `rng` for X_1, then exactly one
/// 64-bit draw per alive cell in label order. That draw seeds the cell's
/// private stream from which the noise of its daughters is taken, so the
/// number of draws from `rng` does not depend on kinds or on rejection.
inline PopulationSample simulate_population(const GwTree& tree, const BarParams& params,
                                            const NoiseSpec& noise, const InitialLaw& init,
                                            Rng& rng) {
  params.validate();
  noise.validate();
  init.validate();
  if (tree.max_depth() > kMaxTreeDepth) throw InvalidArgument("simulate: tree deeper than hard cap");

  PopulationSample out{tree, std::vector<double>(tree.size(), 0.0)};
  const auto nodes = tree.nodes();
  {
    Rng init_stream(rng());
    out.values[0] = init.draw(init_stream);
  }
  // Daughters of generation g are stored after all of generation g, in the
  // order their mothers appear, so a single forward cursor finds them.
  std::size_t cursor = 1;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    Rng cell(rng());
    const Node& n = nodes[i];
    if (generation_of(n.label) >= tree.max_depth()) continue;
    const double x = out.values[i];
    switch (n.kind) {
      case Kind::BothAlive: {
        auto [e0, e1] = sample_pair_noise(noise, cell);
        out.values[cursor++] = params.alpha0 * x + params.beta0 + e0;
        out.values[cursor++] = params.alpha1 * x + params.beta1 + e1;
        break;
      }
      case Kind::NewOnly:
        out.values[cursor++] =
            params.alpha0p * x + params.beta0p + sample_single_noise(noise, noise.sigma0, cell);
        break;
      case Kind::OldOnly:
        out.values[cursor++] =
            params.alpha1p * x + params.beta1p + sample_single_noise(noise, noise.sigma1, cell);
        break;
      case Kind::NoneAlive: break;
    }
  }
  if (cursor != nodes.size()) throw std::logic_error("simulate: tree layout out of order");

  const double bound = state_bound(params, noise, init) * (1.0 + 1e-12);
  for (double v : out.values)
    if (!(std::abs(v) <= bound)) throw std::logic_error("simulate: value escaped the state bound");
  return out;
}

// Fixture format: "label,generation,value", one line per alive cell.

inline void write_sample(std::ostream& os, const PopulationSample& s) {
  char buf[64];
  const auto nodes = s.tree.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.values[i]);
    os << nodes[i].label << ',' << generation_of(nodes[i].label) << ',' << buf << '\n';
  }
}

/// Values for an already loaded tree; every alive label must appear once.
inline PopulationSample read_sample(std::istream& is, const GwTree& tree) {
  PopulationSample s{tree, std::vector<double>(tree.size(), 0.0)};
  std::vector<bool> seen(tree.size(), false);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_csv(line);
    if (f.size() != 3) throw InvalidArgument("sample fixture: expected 3 fields");
    auto idx = tree.index_of(std::stoull(f[0]));
    if (!idx) throw InvalidArgument("sample fixture: label " + f[0] + " not in tree");
    if (seen[*idx]) throw InvalidArgument("sample fixture: duplicate label " + f[0]);
    seen[*idx] = true;
    s.values[*idx] = std::stod(f[2]);
  }
  for (bool b : seen)
    if (!b) throw InvalidArgument("sample fixture: alive cell without value");
  return s;
}

}  // namespace barlab
