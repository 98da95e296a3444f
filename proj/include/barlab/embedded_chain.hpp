#pragma once

// The single-lineage chain Y with kernel Q = (P0* + P1*) / m, written as a
// random-coefficient AR(1): Y' = a Y + b' + s e.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include "barlab/bar_sim.hpp"
#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/random.hpp"

namespace barlab {

/// Which noise feeds an atom of the coefficient law.
enum class AtomNoise : std::uint8_t { PairNew, PairOld, LoneNew, LoneOld };

struct CoefficientAtom {
  double a = 0.0;       // slope
  double b = 0.0;       // intercept b'
  double s = 0.0;       // nominal noise standard deviation
  double weight = 0.0;  // probability of the atom
  AtomNoise noise = AtomNoise::PairNew;
};

/// Law of (a, b', s): (alpha_eta, beta_eta, sigma) with weight p10/m each,
/// (alpha_eta', beta_eta', sigma_eta) with weight p_eta/m.
struct CoefficientLaw {
  std::array<CoefficientAtom, 4> atoms{};

  static CoefficientLaw from(const BarParams& p, const NoiseSpec& noise, const OffspringLaw& law) {
    law.validate();
    const double m = law.mean();
    if (!(m > 0.0)) throw InvalidArgument("coefficient law: mean offspring must be positive");
    CoefficientLaw c;
    c.atoms[0] = {p.alpha0, p.beta0, noise.sigma, law.p10 / m, AtomNoise::PairNew};
    c.atoms[1] = {p.alpha1, p.beta1, noise.sigma, law.p10 / m, AtomNoise::PairOld};
    c.atoms[2] = {p.alpha0p, p.beta0p, noise.sigma0, law.p0 / m, AtomNoise::LoneNew};
    c.atoms[3] = {p.alpha1p, p.beta1p, noise.sigma1, law.p1 / m, AtomNoise::LoneOld};
    return c;
  }

  double total_weight() const noexcept {
    double w = 0.0;
    for (const auto& at : atoms) w += at.weight;
    return w;
  }
};

/// Index of the atom selected by one uniform draw.
inline std::size_t draw_atom(const CoefficientLaw& law, Rng& rng) noexcept {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < law.atoms.size(); ++i) {
    acc += law.atoms[i].weight;
    if (u < acc) return i;
  }
  return law.atoms.size() - 1;
}

inline const CoefficientAtom& draw_coefficients(const CoefficientLaw& law, Rng& rng) noexcept {
  return law.atoms[draw_atom(law, rng)];
}

/// a y + b' + s e.
constexpr double chain_step(double y, const CoefficientAtom& c, double e) noexcept {
  return c.a * y + c.b + c.s * e;
}

/// Noise of an atom, with the marginal the tree simulation gives it.
inline double draw_atom_noise(const CoefficientAtom& c, const NoiseSpec& noise, Rng& rng) {
  switch (c.noise) {
    case AtomNoise::PairNew: return sample_pair_noise(noise, rng).first;
    case AtomNoise::PairOld: return sample_pair_noise(noise, rng).second;
    case AtomNoise::LoneNew:
    case AtomNoise::LoneOld: return sample_single_noise(noise, c.s, rng);
  }
  return 0.0;
}

/// Everything needed to run Y.
struct ChainModel {
  CoefficientLaw coefficients;
  NoiseSpec noise;

  static ChainModel from(const BarParams& p, const NoiseSpec& noise, const OffspringLaw& law) {
    p.validate();
    noise.validate();
    return {CoefficientLaw::from(p, noise, law), noise};
  }

  double step(double y, Rng& rng) const {
    const CoefficientAtom& c = draw_coefficients(coefficients, rng);
    return c.a * y + c.b + draw_atom_noise(c, noise, rng);
  }
};

// ---------------------------------------------------------------------------
// Truncated noise moments

inline double standard_normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
inline double standard_normal_cdf(double x) noexcept {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// E[Z^2 | |Z| <= k] for Z ~ N(0,1).
inline double truncated_second_moment(double k) {
  if (!(k > 0.0)) throw InvalidArgument("truncated_second_moment: k must be > 0");
  const double mass = std::erf(k / std::numbers::sqrt2);
  return 1.0 - 2.0 * k * standard_normal_pdf(k) / mass;
}

/// E[Z1^2 | |Z1| <= k, |Z2| <= k] for a standard bivariate normal with
/// correlation rho. One-dimensional Simpson quadrature over Z1.
inline double pair_marginal_second_moment(double rho, double k, int intervals = 4000) {
  if (!(k > 0.0)) throw InvalidArgument("pair_marginal_second_moment: k must be > 0");
  if (!(rho > -1.0 && rho < 1.0)) throw InvalidArgument("pair_marginal_second_moment: |rho| < 1");
  const double c = std::sqrt(1.0 - rho * rho);
  auto cond_mass = [&](double x) {
    return standard_normal_cdf((k - rho * x) / c) - standard_normal_cdf((-k - rho * x) / c);
  };
  const int n = intervals + intervals % 2;
  const double h = 2.0 * k / n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = -k + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double g = w * standard_normal_pdf(x) * cond_mass(x);
    den += g;
    num += g * x * x;
  }
  return num / den;
}

/// E[(s e)^2] for the noise attached to an atom.
inline double atom_noise_second_moment(const CoefficientAtom& c, const NoiseSpec& noise) {
  switch (noise.mode) {
    case NoiseMode::Noiseless: return 0.0;
    case NoiseMode::TwoPoint: return c.s * c.s;
    case NoiseMode::Gaussian:
      if (c.noise == AtomNoise::PairNew || c.noise == AtomNoise::PairOld)
        return c.s * c.s * pair_marginal_second_moment(noise.rho, noise.trunc_k);
      return c.s * c.s * truncated_second_moment(noise.trunc_k);
  }
  return 0.0;
}

/// First and second moments of (a, b = b' + s e) under the coefficient law.
struct MomentBars {
  double alpha = 0.0;       // E[a]
  double alpha2 = 0.0;      // E[a^2]
  double beta = 0.0;        // E[b] = E[b']
  double beta2 = 0.0;       // E[b^2] = E[b'^2] + E[(s e)^2]
  double alpha_beta = 0.0;  // E[a b] = E[a b']
  double sigma2 = 0.0;      // E[s^2], nominal
  double noise2 = 0.0;      // E[(s e)^2], with truncation
  double b_prime2 = 0.0;    // E[b'^2]

  static MomentBars from(const CoefficientLaw& law, const NoiseSpec& noise) {
    MomentBars mb;
    for (const auto& c : law.atoms) {
      mb.alpha += c.weight * c.a;
      mb.alpha2 += c.weight * c.a * c.a;
      mb.beta += c.weight * c.b;
      mb.b_prime2 += c.weight * c.b * c.b;
      mb.alpha_beta += c.weight * c.a * c.b;
      mb.sigma2 += c.weight * c.s * c.s;
      mb.noise2 += c.weight * atom_noise_second_moment(c, noise);
    }
    mb.beta2 = mb.b_prime2 + mb.noise2;
    return mb;
  }
};

struct StationaryMoments {
  double mu1 = 0.0;  // E[Z]
  double mu2 = 0.0;  // E[Z^2]
};

/// Moments of the stationary law of Y (the a.s. limit Z of the
/// random-coefficient recursion). mu2 solves E[Z^2] = E[(aZ' + b)^2] with Z'
/// independent of (a, b).
inline StationaryMoments stationary_moments(const BarParams& params, const NoiseSpec& noise,
                                            const OffspringLaw& law) {
  params.validate();
  noise.validate();
  law.validate();
  if (!law.h3()) throw HypothesisViolation("H3", "p10 + p0 + p1 must equal 1");
  const MomentBars mb = MomentBars::from(CoefficientLaw::from(params, noise, law), noise);
  if (!(mb.alpha2 < 1.0)) throw InvalidArgument("stationary_moments: E[a^2] must be < 1");
  StationaryMoments sm;
  sm.mu1 = mb.beta / (1.0 - mb.alpha);
  sm.mu2 = (2.0 * mb.alpha_beta * sm.mu1 + mb.beta2) / (1.0 - mb.alpha2);
  return sm;
}

/// The second-moment expression with an additional E[a^2] in the
/// numerator, as it is sometimes quoted. Kept only so tests can show that the
/// long-run chain rejects it.
inline double second_moment_with_extra_alpha2(const BarParams& params, const NoiseSpec& noise,
                                              const OffspringLaw& law) {
  const MomentBars mb = MomentBars::from(CoefficientLaw::from(params, noise, law), noise);
  const double mu1 = mb.beta / (1.0 - mb.alpha);
  return (2.0 * mb.alpha_beta * mu1 + mb.beta2 + mb.alpha2) / (1.0 - mb.alpha2);
}

/// max(|alpha0|, |alpha1|, |alpha0'|, |alpha1'|), the geometric rate of Q.
inline double ergodicity_alpha(const BarParams& params) { return params.max_abs_slope(); }

// ---------------------------------------------------------------------------
// Long-run averages

struct LongRunEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // batch-means standard error
};

struct LongRunOptions {
  long burn_in = 1000;
  long length = 1'000'000;
  int batches = 100;
};

/// Time averages of f_j(Y_t) for several functions at once, from one chain
/// started at y0. Standard errors use non-overlapping batch means.
template <class... F>
std::array<LongRunEstimate, sizeof...(F)> long_run_averages(const ChainModel& chain, double y0,
                                                             const LongRunOptions& opt, Rng& rng,
                                                             const F&... f) {
  constexpr std::size_t K = sizeof...(F);
  if (opt.length <= 0 || opt.batches < 2 || opt.length < opt.batches)
    throw InvalidArgument("long_run_averages: need length >= batches >= 2");
  double y = y0;
  for (long t = 0; t < opt.burn_in; ++t) y = chain.step(y, rng);

  const long per_batch = opt.length / opt.batches;
  std::array<std::vector<double>, K> batch_means;
  for (auto& v : batch_means) v.reserve(static_cast<std::size_t>(opt.batches));
  std::array<double, K> acc{};
  for (long t = 0; t < per_batch * opt.batches; ++t) {
    y = chain.step(y, rng);
    std::size_t j = 0;
    ((acc[j++] += f(y)), ...);
    if ((t + 1) % per_batch == 0) {
      for (std::size_t i = 0; i < K; ++i) {
        batch_means[i].push_back(acc[i] / static_cast<double>(per_batch));
        acc[i] = 0.0;
      }
    }
  }
  std::array<LongRunEstimate, K> out{};
  for (std::size_t i = 0; i < K; ++i) {
    const auto& bm = batch_means[i];
    double mean = 0.0;
    for (double v : bm) mean += v;
    mean /= static_cast<double>(bm.size());
    double ss = 0.0;
    for (double v : bm) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(bm.size() - 1);
    out[i] = {mean, std::sqrt(var / static_cast<double>(bm.size()))};
  }
  return out;
}

template <class F>
LongRunEstimate long_run_average(const ChainModel& chain, double y0, const LongRunOptions& opt,
                                 Rng& rng, const F& f) {
  return long_run_averages(chain, y0, opt, rng, f)[0];
}

// ---------------------------------------------------------------------------
// Empirical |Q^k f(x) - <mu, f>|

struct GapPoint {
  int k = 0;
  double gap = 0.0;        // max over the grid of |mean f(Y_k) - mu_f|
  double std_error = 0.0;  // standard error of the gap at the maximising start
};

struct DecayCurve {
  std::vector<GapPoint> points;
  double mu_f = 0.0;
  double mu_f_std_error = 0.0;
};

/// For each k <= k_max and each start x, run n_rep independent copies of Y
/// from x; report the largest |mean f(Y_k) - mu_f| over the grid.
/// Replicate j from start index g uses the stream (seed, Chain, g * n_rep + j).
template <class F>
DecayCurve empirical_qk_gap(const ChainModel& chain, const F& f, std::span<const double> x_grid,
                            int k_max, long n_rep, std::uint64_t seed, LongRunEstimate mu_f) {
  if (x_grid.empty()) throw InvalidArgument("empirical_qk_gap: empty start grid");
  if (k_max < 0 || n_rep < 2) throw InvalidArgument("empirical_qk_gap: need k_max >= 0, n_rep >= 2");
  const auto K = static_cast<std::size_t>(k_max) + 1;
  DecayCurve curve;
  curve.mu_f = mu_f.mean;
  curve.mu_f_std_error = mu_f.std_error;
  curve.points.resize(K);
  for (std::size_t k = 0; k < K; ++k) curve.points[k].k = static_cast<int>(k);

  std::vector<double> sum(K), sum2(K);
  for (std::size_t g = 0; g < x_grid.size(); ++g) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sum2.begin(), sum2.end(), 0.0);
    for (long j = 0; j < n_rep; ++j) {
      Rng rng(seed, StreamTag::Chain, g * static_cast<std::uint64_t>(n_rep) + static_cast<std::uint64_t>(j));
      double y = x_grid[g];
      for (std::size_t k = 0; k < K; ++k) {
        if (k > 0) y = chain.step(y, rng);
        const double v = f(y);
        sum[k] += v;
        sum2[k] += v * v;
      }
    }
    const double n = static_cast<double>(n_rep);
    for (std::size_t k = 0; k < K; ++k) {
      const double mean = sum[k] / n;
      const double var = std::max(0.0, (sum2[k] - n * mean * mean) / (n - 1.0));
      const double gap = std::abs(mean - mu_f.mean);
      if (g == 0 || gap > curve.points[k].gap) {
        curve.points[k].gap = gap;
        curve.points[k].std_error = std::sqrt(var / n + mu_f.std_error * mu_f.std_error);
      }
    }
  }
  return curve;
}

struct RateFit {
  double rate = 0.0;   // fitted per-step geometric factor
  double slope = 0.0;  // slope of log gap against k
  int points_used = 0;
};

/// Least-squares fit of log gap(k) = c + k log(rate) over the points whose gap
/// clears the Monte Carlo floor (gap > floor_se * std_error). Fitting stops at
/// the first point below the floor.
inline RateFit fit_geometric_rate(const DecayCurve& curve, double floor_se = 4.0) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve.points) {
    if (!(p.gap > floor_se * p.std_error) || !(p.gap > 0.0)) break;
    pts.emplace_back(static_cast<double>(p.k), std::log(p.gap));
  }
  if (pts.size() < 2) throw InvalidArgument("fit_geometric_rate: fewer than 2 points above the noise floor");
  double mx = 0, my = 0;
  for (auto [x, y] : pts) mx += x, my += y;
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0, sxx = 0;
  for (auto [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.rate = std::exp(fit.slope);
  fit.points_used = static_cast<int>(pts.size());
  return fit;
}

inline void write_decay_csv(std::ostream& os, const DecayCurve& curve) {
  os << "k,gap\n";
  char buf[64];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.gap);
    os << p.k << ',' << buf << '\n';
  }
}

}  // namespace barlab
