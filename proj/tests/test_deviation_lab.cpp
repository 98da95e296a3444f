#include <gtest/gtest.h>

#include <cmath>

#include "barlab/deviation_lab.hpp"
#include "oracle.hpp"

using namespace barlab;

namespace {

DeviationSpec base_spec() {
  DeviationSpec s;
  s.law = {0.9, 0.05, 0.05};
  s.params = {0.5, 1, 0.3, 0.8, 0.4, 0.9, 0.2, 1.1};
  s.noise.sigma = 0.5;
  s.noise.rho = 0.2;
  s.init = InitialLaw::point(0.0);
  s.deltas = {0.1, 0.5};
  s.depths = {2, 4};
  s.n_rep = 500;
  s.seed = 17;
  s.long_run.length = 100000;
  return s;
}

DeviationEstimate fake(int r, double p_hat, std::uint64_t n = 100) {
  const auto k = static_cast<std::uint64_t>(std::llround(p_hat * n));
  return DeviationEstimate::from_counts(0.5, r, k, n, 1);
}

}  // namespace

TEST(ClopperPearson, ZeroSuccesses) {
  auto [lo, hi] = clopper_pearson(0, 100);
  EXPECT_EQ(lo, 0.0);
  EXPECT_NEAR(hi, 1 - std::pow(0.05, 0.01), 1e-15);
  EXPECT_NEAR(hi, 0.0295, 1e-4);
}

TEST(ClopperPearson, InteriorMatchesBinomialTails) {
  // at the limits the binomial tails equal 2.5%
  const std::uint64_t n = 40, k = 7;
  auto [lo, hi] = clopper_pearson(k, n);
  auto binom_tail_ge = [&](double p) {
    double s = 0;
    for (std::uint64_t i = k; i <= n; ++i)
      s += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + i * std::log(p) +
                    (n - i) * std::log1p(-p));
    return s;
  };
  auto binom_tail_le = [&](double p) {
    double s = 0;
    for (std::uint64_t i = 0; i <= k; ++i)
      s += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + i * std::log(p) +
                    (n - i) * std::log1p(-p));
    return s;
  };
  EXPECT_NEAR(binom_tail_ge(lo), 0.025, 1e-10);
  EXPECT_NEAR(binom_tail_le(hi), 0.025, 1e-10);
}

TEST(McDeviation, ZeroFunctionNeverExceeds) {
  auto s = base_spec();
  s.f = {NodeFn::Form::Affine, 0.0, 0.0, 0.0};
  for (const auto& c : mc_deviation(s).cells) EXPECT_EQ(c.estimate->k_exceed, 0u);
}

TEST(McDeviation, AboveHardBoundNeverExceeds) {
  auto s = base_spec();
  s.f = {NodeFn::Form::IndicatorAbove, 1.0, 0.0, -100.0};  // f = 1 on every cell, sup norm 1
  s.depths = {3, 5};
  s.deltas = {std::pow(2 / 1.9, 5) * 1.0001, std::pow(2 / 1.9, 3) * 1.0001};
  const auto res = mc_deviation(s);
  for (const auto& c : res.cells)
    if (c.delta > std::pow(2 / 1.9, c.r)) {
      EXPECT_EQ(c.estimate->k_exceed, 0u) << c.r;
    }
}

TEST(McDeviation, MatchesEnumerationOracle) {
  const auto sys = oracle::reference_system();
  const auto exact = oracle::tilde_law(sys, [](double x) { return x; }, oracle::kReferenceX1, 2);
  DeviationSpec s;
  s.law = sys.law;
  s.params = sys.theta;
  s.noise = oracle::noise_of(sys);
  s.init = InitialLaw::point(oracle::kReferenceX1);
  s.deltas = {1.0, 1.6};
  s.depths = {2};
  s.n_rep = 20000;
  s.seed = 99;
  for (double d : s.deltas) ASSERT_GT(oracle::distance_to_atoms(exact, d), 1e-6);
  const auto res = mc_deviation(s);
  for (double d : s.deltas) {
    const double p = oracle::tail(exact, d);
    const auto& e = *res.at(d, 2).estimate;
    EXPECT_NEAR(e.p_hat, p, 4 * std::sqrt(p * (1 - p) / s.n_rep)) << d;
  }
}

TEST(McDeviation, WorkerCountInvariant) {
  auto s = base_spec();
  s.centered = true;
  s.subtract_mean = true;
  const auto a = mc_deviation(s, 1);
  const auto b = mc_deviation(s, 4);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  EXPECT_EQ(a.mu_f, b.mu_f);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(a.cells[i].estimate->k_exceed, b.cells[i].estimate->k_exceed);
    EXPECT_EQ(a.cells[i].estimate->n_rep, b.cells[i].estimate->n_rep);
  }
}

TEST(Conditional, FullTreeKeepsOrDropsAll) {
  auto s = base_spec();
  s.law = {1, 0, 0};
  s.kind = ExperimentKind::Conditional;
  s.a = 1.0;
  auto res = mc_conditional_deviation(s);
  for (const auto& c : res.cells) EXPECT_EQ(c.estimate->n_rep, s.n_rep);
  s.a = 1.0001;
  res = mc_conditional_deviation(s);
  for (const auto& c : res.cells) EXPECT_TRUE(c.no_mass());
}

TEST(GwLln, DeterministicTree) {
  auto s = base_spec();
  s.law = {1, 0, 0};
  s.kind = ExperimentKind::GwLln;
  s.deltas = {1e-9, 0.1};
  for (const auto& c : mc_gw_lln(s).cells) EXPECT_EQ(c.estimate->k_exceed, 0u);
}

TEST(GwLln, ShrinksWithDepth) {
  auto s = base_spec();
  s.kind = ExperimentKind::GwLln;
  s.deltas = {0.05};
  s.depths = {2, 8};
  s.n_rep = 2000;
  const auto res = mc_gw_lln(s);
  EXPECT_LT(res.at(0.05, 8).estimate->p_hat, res.at(0.05, 2).estimate->p_hat);
}

TEST(Theta, NoiselessExactRecovery) {
  auto s = base_spec();
  s.law = {0.6, 0.2, 0.2};
  s.noise.mode = NoiseMode::Noiseless;
  s.kind = ExperimentKind::Theta;
  s.a = 1e-9;
  s.init = InitialLaw::uniform(-2, 2);
  s.deltas = {1e-8, 0.5};
  s.depths = {6, 8};
  s.n_rep = 200;
  const auto res = mc_theta_deviation(s);
  // every exceedance is a degenerate fit (a lone class with < 2 cells);
  // the non-degenerate fits are exact even at delta = 1e-8
  for (const auto& c : res.cells) EXPECT_LE(c.estimate->k_exceed, res.degenerate_replicates) << c.delta << " " << c.r;
  EXPECT_EQ(res.at(1e-8, 8).estimate->k_exceed, res.at(0.5, 8).estimate->k_exceed);
  EXPECT_LT(res.degenerate_replicates, s.n_rep / 10);
}

TEST(Theta, DegenerateFitsCountAsExceedances) {
  auto s = base_spec();
  s.law = {1, 0, 0};  // no lone daughters: every fit is degenerate
  s.kind = ExperimentKind::Theta;
  s.a = 0.5;
  s.deltas = {100.0};
  s.depths = {3};
  s.n_rep = 20;
  const auto res = mc_theta_deviation(s);
  EXPECT_EQ(res.cells[0].estimate->k_exceed, 20u);
  EXPECT_EQ(res.degenerate_replicates, 20u);
}

TEST(DecayFit, Collinear) {
  std::vector<DeviationEstimate> es;
  for (auto [r, y] : {std::pair{2, 1.0}, std::pair{4, 2.0}, std::pair{6, 3.0}}) {
    DeviationEstimate e;
    e.r = r;
    e.p_hat = std::exp(-y);
    es.push_back(e);
  }
  const DecayFit f = decay_fit(es);
  EXPECT_NEAR(f.slope, 0.5, 1e-14);
  EXPECT_NEAR(f.residual, 0.0, 1e-24);
}

TEST(DecayFit, FlatAndExcluded) {
  std::vector<DeviationEstimate> es{fake(2, 0.3), fake(4, 0.3), fake(6, 0.3), fake(8, 0.0)};
  const DecayFit f = decay_fit(es);
  EXPECT_NEAR(f.slope, 0.0, 1e-14);
  ASSERT_EQ(f.excluded.size(), 1u);
  EXPECT_EQ(f.excluded[0].r, 8);
  EXPECT_NEAR(f.excluded[0].ci_high, 1 - std::pow(0.05, 0.01), 1e-15);
  EXPECT_THROW(decay_fit({fake(2, 0.3), fake(4, 0.0), fake(6, 0.2)}), InvalidArgument);
}

TEST(DeviationSpec, Validation) {
  auto s = base_spec();
  s.deltas.clear();
  EXPECT_THROW(mc_deviation(s), InvalidArgument);
  s = base_spec();
  s.deltas = {-0.1};
  EXPECT_THROW(mc_deviation(s), InvalidArgument);
}
