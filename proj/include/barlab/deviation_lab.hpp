#pragma once

// Seeded Monte Carlo estimates of deviation probabilities, exact binomial
// intervals and decay-rate fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "barlab/bar_sim.hpp"
#include "barlab/bounds.hpp"
#include "barlab/embedded_chain.hpp"
#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/lse.hpp"
#include "barlab/parallel.hpp"
#include "barlab/random.hpp"
#include "barlab/tree_statistics.hpp"

namespace barlab {

/// Exact binomial interval at confidence `level`. For 0 < k < n each tail
/// gets (1-level)/2; at k = 0 (k = n) the closed side is exact, so the open
/// side gets the whole 1-level, e.g. upper = 1 - (1-level)^{1/n} at k = 0.
inline std::pair<double, double> clopper_pearson(std::uint64_t k, std::uint64_t n, double level = 0.95) {
  if (n == 0) throw InvalidArgument("clopper_pearson: n must be > 0");
  if (k > n) throw InvalidArgument("clopper_pearson: k > n");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("clopper_pearson: level must lie in (0,1)");
  const double tail = 1.0 - level;
  const double nd = static_cast<double>(n), kd = static_cast<double>(k);
  if (k == 0) return {0.0, 1.0 - std::pow(tail, 1.0 / nd)};
  if (k == n) return {std::pow(tail, 1.0 / nd), 1.0};
  const double lo = boost::math::ibeta_inv(kd, nd - kd + 1.0, tail / 2.0);
  const double hi = boost::math::ibeta_inv(kd + 1.0, nd - kd, 1.0 - tail / 2.0);
  return {lo, hi};
}

struct DeviationEstimate {
  double delta = 0.0;
  int r = 0;
  std::uint64_t n_rep = 0;     // replicates that entered the count
  std::uint64_t k_exceed = 0;  // replicates whose statistic exceeded delta
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  std::uint64_t seed = 0;

  static DeviationEstimate from_counts(double delta, int r, std::uint64_t k, std::uint64_t n, std::uint64_t seed) {
    DeviationEstimate e;
    e.delta = delta;
    e.r = r;
    e.n_rep = n;
    e.k_exceed = k;
    e.p_hat = static_cast<double>(k) / static_cast<double>(n);
    std::tie(e.ci_low, e.ci_high) = clopper_pearson(k, n);
    e.seed = seed;
    return e;
  }
};

/// Single-cell test function f, with f(dead) = 0 implied by the sums.
struct NodeFn {
  enum class Form { Affine, Square, IndicatorAbove } form = Form::Affine;
  double slope = 1.0;      // Affine: slope * x + intercept
  double intercept = 0.0;
  double threshold = 0.0;  // IndicatorAbove: 1{x > threshold}

  double operator()(double x) const noexcept {
    switch (form) {
      case Form::Affine: return slope * x + intercept;
      case Form::Square: return x * x;
      case Form::IndicatorAbove: return x > threshold ? 1.0 : 0.0;
    }
    return 0.0;
  }
  /// sup |f| over [-B, B].
  double sup_norm(double B) const noexcept {
    switch (form) {
      case Form::Affine: return std::abs(slope) * B + std::abs(intercept);
      case Form::Square: return B * B;
      case Form::IndicatorAbove: return 1.0;
    }
    return 0.0;
  }
};

enum class ExperimentKind {
  Plain,        // P(M~_{H_r*}(f) [- <mu,f> W] > delta)
  Conditional,  // P(M-bar_{H_r*}(f) - <mu,f> > delta | W >= a)
  Theta,        // P(||theta-hat_n - theta|| > delta | W >= a)
  GwLln,        // P(| |G_r*|/m^r - W | > delta)
};

inline const char* experiment_kind_name(ExperimentKind k) noexcept {
  switch (k) {
    case ExperimentKind::Plain: return "plain";
    case ExperimentKind::Conditional: return "conditional";
    case ExperimentKind::Theta: return "theta";
    case ExperimentKind::GwLln: return "gw_lln";
  }
  return "?";
}

struct DeviationSpec {
  ExperimentKind kind = ExperimentKind::Plain;
  OffspringLaw law;
  BarParams params;
  NoiseSpec noise;
  InitialLaw init;
  NodeFn f;
  bool subtract_mean = false;  // use f - <mu,f>-estimate as the test function
  bool centered = false;       // Plain: subtract <mu,f> * W-proxy
  std::vector<double> deltas;
  std::vector<int> depths;     // r-grid (n-grid for Theta)
  std::uint64_t n_rep = 1000;
  SetKind set_kind = SetKind::Generation;
  double a = 1.0;              // conditioning level, Conditional and Theta
  int w_depth_offset = 6;      // W-proxy depth = r + offset
  std::uint64_t seed = 1;
  LongRunOptions long_run;     // for <mu,f>

  void validate() const {
    law.validate();
    params.validate();
    noise.validate();
    init.validate();
    if (deltas.empty()) throw InvalidArgument("deviation: empty delta grid");
    for (double d : deltas)
      if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument("deviation: every delta must be finite and > 0");
    if (depths.empty()) throw InvalidArgument("deviation: empty depth grid");
    for (int r : depths)
      if (r < 0 || r + 1 > kMaxTreeDepth - w_depth_offset) throw InvalidArgument("deviation: depth out of range");
    if (n_rep == 0) throw InvalidArgument("deviation: n_rep must be > 0");
    if (w_depth_offset < 0) throw InvalidArgument("deviation: w_depth_offset must be >= 0");
    if ((kind == ExperimentKind::Conditional || kind == ExperimentKind::Theta) && !(a > 0.0))
      throw InvalidArgument("deviation: conditioning level a must be > 0");
    if (!(law.mean() > 0.0)) throw InvalidArgument("deviation: mean offspring must be > 0");
  }

  int tree_depth() const {
    const int deepest = *std::max_element(depths.begin(), depths.end());
    return kind == ExperimentKind::Theta ? deepest + 1 : deepest;
  }
};

struct DeviationCell {
  double delta = 0.0;
  int r = 0;
  std::uint64_t n_total = 0;                 // replicates simulated
  std::optional<DeviationEstimate> estimate;  // nullopt: no replicate met the condition
  bool no_mass() const noexcept { return !estimate.has_value(); }
};

struct DeviationResult {
  std::vector<DeviationCell> cells;  // delta-major, then depth, in grid order
  double mu_f = 0.0;                 // <mu,f> estimate used (0 when not needed)
  double mu_f_std_error = 0.0;
  std::uint64_t degenerate_replicates = 0;  // Theta: degenerate fits, summed over n

  const DeviationCell& at(double delta, int r) const {
    for (const auto& c : cells)
      if (c.delta == delta && c.r == r) return c;
    throw InvalidArgument("deviation result: no cell for requested (delta, r)");
  }
};

/// Long-run chain estimate of <mu, f> for the experiment's model.
inline LongRunEstimate estimate_mu_f(const DeviationSpec& spec) {
  const ChainModel chain = ChainModel::from(spec.params, spec.noise, spec.law);
  Rng rng(spec.seed, StreamTag::Chain, std::numeric_limits<std::uint64_t>::max());
  const double y0 = 0.5 * (spec.init.lo + spec.init.hi);
  const NodeFn f = spec.f;
  return long_run_average(chain, y0, spec.long_run, rng, [f](double y) { return f(y); });
}

namespace detail {

inline bool needs_mu_f(const DeviationSpec& s) {
  if (s.kind == ExperimentKind::Conditional) return true;
  if (s.kind == ExperimentKind::Plain) return s.subtract_mean || s.centered;
  return false;
}

/// Statistic of one replicate at each depth; pass[i] says whether the
/// replicate counts for depth i (conditioning). Non-finite statistics
/// exceed every delta.
struct ReplicateOutcome {
  std::vector<double> stat;
  std::vector<std::uint8_t> pass;
  std::uint32_t degenerate = 0;
};

inline ReplicateOutcome run_replicate(const DeviationSpec& s, double mu_f, std::uint64_t j) {
  const std::size_t D = s.depths.size();
  ReplicateOutcome out{std::vector<double>(D, 0.0), std::vector<std::uint8_t>(D, 1), 0};
  const double m = s.law.mean();
  Rng tree_rng(s.seed, StreamTag::Tree, j);
  const GwTree tree = sample_tree(s.law, s.tree_depth(), tree_rng);

  std::vector<std::uint64_t> sizes;
  const bool needs_w = s.kind != ExperimentKind::Plain || s.centered;
  if (needs_w) {
    Rng ext_rng(s.seed, StreamTag::Extension, j);
    const int deepest = *std::max_element(s.depths.begin(), s.depths.end());
    sizes = extended_generation_sizes(tree, s.law, deepest + s.w_depth_offset, ext_rng);
  }
  auto w_at = [&](int r) {
    const int d = r + s.w_depth_offset;
    return static_cast<double>(sizes[static_cast<std::size_t>(d)]) / std::pow(m, d);
  };

  if (s.kind == ExperimentKind::GwLln) {
    for (std::size_t i = 0; i < D; ++i) {
      const int r = s.depths[i];
      out.stat[i] = std::abs(static_cast<double>(sizes[static_cast<std::size_t>(r)]) / std::pow(m, r) - w_at(r));
    }
    return out;
  }

  Rng pop_rng(s.seed, StreamTag::Population, j);
  const PopulationSample sample = simulate_population(tree, s.params, s.noise, s.init, pop_rng);
  const NodeFn f = s.f;
  const double shift = s.subtract_mean ? mu_f : 0.0;
  auto g = [f, shift](double x) { return f(x) - shift; };

  for (std::size_t i = 0; i < D; ++i) {
    const int r = s.depths[i];
    switch (s.kind) {
      case ExperimentKind::Plain: {
        const SetSum ss = sum_over(sample, r, s.set_kind, g);
        double v = ss.sum / expected_set_size(m, r, s.set_kind);
        if (s.centered) v -= (mu_f - shift) * w_at(r);
        out.stat[i] = v;
        break;
      }
      case ExperimentKind::Conditional: {
        out.pass[i] = w_at(r) >= s.a;
        if (!out.pass[i]) break;
        const SetSum ss = sum_over(sample, r, s.set_kind, g);
        out.stat[i] = ss.count ? ss.sum / static_cast<double>(ss.count) - (mu_f - shift)
                               : std::numeric_limits<double>::infinity();
        break;
      }
      case ExperimentKind::Theta: {
        out.pass[i] = w_at(r) >= s.a;
        if (!out.pass[i]) break;
        const ThetaEstimate est = lse(sample, r);
        if (est.complete()) {
          out.stat[i] = estimation_error(est, s.params);
        } else {
          out.stat[i] = std::numeric_limits<double>::infinity();
          ++out.degenerate;
        }
        break;
      }
      case ExperimentKind::GwLln: break;
    }
  }
  return out;
}

}  // namespace detail

/// Run the experiment. Replicate j draws from streams (seed, tag, j) only,
/// and counts are merged in index order, so the result does not depend on
/// `jobs`.
inline DeviationResult run_deviation(const DeviationSpec& spec, unsigned jobs = 1) {
  spec.validate();
  DeviationResult result;
  if (detail::needs_mu_f(spec)) {
    const LongRunEstimate mu = estimate_mu_f(spec);
    result.mu_f = mu.mean;
    result.mu_f_std_error = mu.std_error;
  }
  const std::size_t N = spec.n_rep;
  std::vector<detail::ReplicateOutcome> outcomes(N);
  parallel_for(N, jobs, [&](std::size_t j) { outcomes[j] = detail::run_replicate(spec, result.mu_f, j); });

  for (double delta : spec.deltas) {
    for (std::size_t i = 0; i < spec.depths.size(); ++i) {
      std::uint64_t k = 0, n = 0;
      for (const auto& o : outcomes) {
        if (!o.pass[i]) continue;
        ++n;
        if (!(o.stat[i] <= delta)) ++k;
      }
      DeviationCell cell;
      cell.delta = delta;
      cell.r = spec.depths[i];
      cell.n_total = N;
      if (n > 0) cell.estimate = DeviationEstimate::from_counts(delta, spec.depths[i], k, n, spec.seed);
      result.cells.push_back(cell);
    }
  }
  for (const auto& o : outcomes) result.degenerate_replicates += o.degenerate;
  return result;
}

inline DeviationResult mc_deviation(DeviationSpec spec, unsigned jobs = 1) {
  spec.kind = ExperimentKind::Plain;
  return run_deviation(spec, jobs);
}
inline DeviationResult mc_conditional_deviation(DeviationSpec spec, unsigned jobs = 1) {
  spec.kind = ExperimentKind::Conditional;
  return run_deviation(spec, jobs);
}
/// Degenerate estimator fits count as exceedances.
inline DeviationResult mc_theta_deviation(DeviationSpec spec, unsigned jobs = 1) {
  spec.kind = ExperimentKind::Theta;
  return run_deviation(spec, jobs);
}
inline DeviationResult mc_gw_lln(DeviationSpec spec, unsigned jobs = 1) {
  spec.kind = ExperimentKind::GwLln;
  return run_deviation(spec, jobs);
}

// ---------------------------------------------------------------------------
// Decay fits

enum class DecayAxis { VsR, VsHr };

struct ExcludedPoint {
  int r = 0;
  double ci_high = 0.0;  // upper confidence limit reported instead of p-hat = 0
};

struct DecayFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // sum of squared residuals
  int points_used = 0;
  std::vector<ExcludedPoint> excluded;
};

/// Least-squares slope of -log p-hat against r (or h_r). Points with
/// p-hat = 0 are excluded and listed with their upper interval limit.
inline DecayFit decay_fit(const std::vector<DeviationEstimate>& estimates, DecayAxis axis = DecayAxis::VsR,
                          double m = 2.0, SetKind kind = SetKind::Generation) {
  DecayFit fit;
  std::vector<std::pair<double, double>> pts;
  for (const auto& e : estimates) {
    if (e.p_hat <= 0.0) {
      fit.excluded.push_back({e.r, e.ci_high});
      continue;
    }
    const double x = axis == DecayAxis::VsR ? static_cast<double>(e.r) : h_r(m, e.r, kind);
    pts.emplace_back(x, -std::log(e.p_hat));
  }
  if (pts.size() < 3) throw InvalidArgument("decay_fit: fewer than 3 points with p-hat > 0");
  double mx = 0, my = 0;
  for (auto [x, y] : pts) mx += x, my += y;
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0, sxy = 0;
  for (auto [x, y] : pts) sxx += (x - mx) * (x - mx), sxy += (x - mx) * (y - my);
  if (!(sxx > 0.0)) throw InvalidArgument("decay_fit: abscissae do not vary");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (auto [x, y] : pts) {
    const double e = y - (fit.intercept + fit.slope * x);
    fit.residual += e * e;
  }
  fit.points_used = static_cast<int>(pts.size());
  return fit;
}

/// Estimates of one delta across the depth grid, in grid order; no-mass
/// cells are skipped.
inline std::vector<DeviationEstimate> estimates_for_delta(const DeviationResult& res, double delta) {
  std::vector<DeviationEstimate> out;
  for (const auto& c : res.cells)
    if (c.delta == delta && c.estimate) out.push_back(*c.estimate);
  return out;
}

}  // namespace barlab
