#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "barlab/gw_tree.hpp"

using namespace barlab;

namespace {

// Exact law of |G_r*| by convolving independent offspring counts, one
// generation at a time.
std::map<int, double> exact_generation_law(const OffspringLaw& law, int r) {
  const double off[3] = {law.none_alive(), law.p0 + law.p1, law.p10};  // P(0), P(1), P(2) daughters
  std::map<int, double> dist{{1, 1.0}};
  for (int g = 0; g < r; ++g) {
    std::map<int, double> next;
    for (auto [size, p] : dist) {
      std::map<int, double> conv{{0, 1.0}};
      for (int c = 0; c < size; ++c) {
        std::map<int, double> t;
        for (auto [s, q] : conv)
          for (int d = 0; d < 3; ++d) t[s + d] += q * off[d];
        conv.swap(t);
      }
      for (auto [s, q] : conv) next[s] += p * q;
    }
    dist.swap(next);
  }
  return dist;
}

}  // namespace

TEST(OffspringLaw, MeanExamples) {
  EXPECT_DOUBLE_EQ(mean_offspring({1, 0, 0}), 2.0);
  EXPECT_NEAR(mean_offspring({0.9, 0.05, 0.05}), 1.9, 1e-15);
  EXPECT_DOUBLE_EQ(mean_offspring({0, 0, 0}), 0.0);
}

TEST(OffspringLaw, RejectsBadProbabilities) {
  EXPECT_THROW(mean_offspring({-0.1, 0.5, 0.5}), InvalidArgument);
  EXPECT_THROW(mean_offspring({0.6, 0.3, 0.3}), InvalidArgument);
  EXPECT_THROW(mean_offspring({1.2, 0, 0}), InvalidArgument);
}

TEST(OffspringLaw, Hypotheses) {
  EXPECT_TRUE(OffspringLaw({0.9, 0.05, 0.05}).h3());
  EXPECT_FALSE(OffspringLaw({0.8, 0.05, 0.05}).h3());
  EXPECT_TRUE(OffspringLaw({0.9, 0.05, 0.05}).strong());
  EXPECT_FALSE(OffspringLaw({0.15, 0.5, 0.5}).strong());  // m = 1.3
}

TEST(ExpectedSizes, Examples) {
  auto [g, t] = expected_sizes(2.0, 2);
  EXPECT_DOUBLE_EQ(g, 4.0);
  EXPECT_DOUBLE_EQ(t, 7.0);
  std::tie(g, t) = expected_sizes(1.9, 2);
  EXPECT_NEAR(g, 3.61, 1e-12);
  EXPECT_NEAR(t, 6.51, 1e-12);
  std::tie(g, t) = expected_sizes(1.9, 0);
  EXPECT_DOUBLE_EQ(g, 1.0);
  EXPECT_NEAR(t, 1.0, 1e-15);
  EXPECT_THROW(expected_sizes(1.0, 3), InvalidArgument);
}

TEST(GeneratingFunction, Examples) {
  for (OffspringLaw law : {OffspringLaw{0.9, 0.05, 0.05}, OffspringLaw{0.2, 0.1, 0.3}, OffspringLaw{0, 0, 0}})
    EXPECT_NEAR(generating_function(law, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(generating_function({0.9, 0.05, 0.05}, 0.5), 0.275, 1e-15);
  EXPECT_DOUBLE_EQ(generating_function({0.9, 0.05, 0.05}, 0.0), 0.0);
  EXPECT_THROW(generating_function({0.9, 0.05, 0.05}, 1.5), InvalidArgument);
}

TEST(GeneratingFunction, MonotoneConvex) {
  const OffspringLaw law{0.3, 0.2, 0.1};
  double prev = -1.0, prev_slope = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double z = i / 100.0;
    const double v = generating_function(law, z);
    EXPECT_GE(v, prev);
    if (i > 0) {
      const double slope = v - prev;
      EXPECT_GE(slope, prev_slope - 1e-15);
      prev_slope = slope;
    }
    prev = v;
  }
}

TEST(Labels, Generation) {
  EXPECT_EQ(generation_of(1), 0);
  EXPECT_EQ(generation_of(2), 1);
  EXPECT_EQ(generation_of(3), 1);
  EXPECT_EQ(generation_of(7), 2);
  EXPECT_EQ(generation_of(8), 3);
}

TEST(SampleTree, FullBinaryTree) {
  Rng rng(1);
  const GwTree t = sample_tree({1, 0, 0}, 3, rng);
  EXPECT_EQ(t.size(), 15u);
  for (int r = 0; r <= 3; ++r) EXPECT_EQ(t.generation_size(r), std::size_t{1} << r);
  EXPECT_EQ(generation_nodes(t, 2), (std::vector<Label>{4, 5, 6, 7}));
}

TEST(SampleTree, AllDead) {
  Rng rng(1);
  const GwTree t = sample_tree({0, 0, 0}, 3, rng);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_TRUE(generation_nodes(t, 1).empty());
  EXPECT_EQ(t.generation_size(3), 0u);
}

TEST(SampleTree, OneDrawPerAliveNode) {
  Rng a(5), b(5);
  const GwTree t = sample_tree({1, 0, 0}, 4, a);
  for (std::size_t i = 0; i < t.size(); ++i) b();
  EXPECT_EQ(a(), b());
}

TEST(SampleTree, ParentClosureAndKinds) {
  Rng rng(3);
  const OffspringLaw law{0.5, 0.2, 0.2};
  for (int rep = 0; rep < 50; ++rep) {
    const GwTree t = sample_tree(law, 6, rng);
    for (const Node& n : t.nodes()) {
      if (n.label > 1) {
        ASSERT_TRUE(t.contains(n.label / 2));
        const Kind pk = t.kind_of(n.label / 2);
        ASSERT_TRUE(n.label % 2 == 0 ? has_new_daughter(pk) : has_old_daughter(pk));
      }
      if (generation_of(n.label) < t.max_depth()) {
        ASSERT_EQ(t.contains(2 * n.label), has_new_daughter(n.kind));
        ASSERT_EQ(t.contains(2 * n.label + 1), has_old_daughter(n.kind));
      }
    }
    std::size_t total = 0;
    for (int r = 0; r <= 6; ++r) {
      total += t.generation_size(r);
      ASSERT_EQ(t.cumulative_size(r), total);
      ASSERT_EQ(cumulative_nodes(t, r).size(), total);
    }
  }
}

TEST(SampleTree, SameSeedSameTree) {
  Rng a(11), b(11);
  EXPECT_TRUE(sample_tree({0.6, 0.2, 0.1}, 8, a) == sample_tree({0.6, 0.2, 0.1}, 8, b));
}

TEST(SampleTree, EnumeratedDepthTwoLaw) {
  const OffspringLaw law{0.5, 0.25, 0.25};
  const auto exact = exact_generation_law(law, 2);
  // hand check of the oracle
  EXPECT_NEAR(exact.at(1), 0.25, 1e-15);
  EXPECT_NEAR(exact.at(2), 0.375, 1e-15);
  EXPECT_NEAR(exact.at(3), 0.25, 1e-15);
  EXPECT_NEAR(exact.at(4), 0.125, 1e-15);
  const int N = 100000;
  std::map<int, int> freq;
  Rng rng(2024);
  for (int i = 0; i < N; ++i) ++freq[static_cast<int>(sample_tree(law, 2, rng).generation_size(2))];
  for (auto [s, p] : exact) {
    const double se = std::sqrt(p * (1 - p) / N);
    EXPECT_NEAR(freq[s] / double(N), p, 4 * se) << "size " << s;
  }
}

TEST(SampleTree, GenerationMeanMatchesPower) {
  const OffspringLaw law{0.9, 0.05, 0.05};
  const int N = 10000, r = 6;
  Rng rng(77);
  double s = 0, ss = 0;
  for (int i = 0; i < N; ++i) {
    const double g = static_cast<double>(sample_tree(law, r, rng).generation_size(r));
    s += g, ss += g * g;
  }
  const double mean = s / N, se = std::sqrt((ss / N - mean * mean) / N);
  EXPECT_NEAR(mean, std::pow(1.9, r), 4 * se);
}

TEST(ClassifyCells, FullTree) {
  Rng rng(1);
  const GwTree t = sample_tree({1, 0, 0}, 3, rng);
  const CellClasses c = classify_cells(t, 1);
  EXPECT_EQ(c.both, (std::vector<Label>{1, 2, 3}));
  EXPECT_TRUE(c.new_only.empty());
  EXPECT_TRUE(c.old_only.empty());
}

TEST(ClassifyCells, HandBuiltTree) {
  const GwTree t = GwTree::from_nodes(2, {{1, Kind::NewOnly}, {2, Kind::OldOnly}, {5, Kind::NoneAlive}});
  const CellClasses c = classify_cells(t, 1);
  EXPECT_TRUE(c.both.empty());
  EXPECT_EQ(c.new_only, (std::vector<Label>{1}));
  EXPECT_EQ(c.old_only, (std::vector<Label>{2}));
}

TEST(ClassifyCells, Partition) {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const GwTree t = sample_tree({0.4, 0.2, 0.2}, 5, rng);
    const CellClasses c = classify_cells(t, 4);
    std::set<Label> all;
    for (const auto* v : {&c.both, &c.new_only, &c.old_only})
      for (Label l : *v) {
        ASSERT_TRUE(all.insert(l).second);
        ASSERT_TRUE(t.contains(l));
        ASSERT_LE(generation_of(l), 4);
      }
  }
}

TEST(GwTree, FromNodesRejectsOrphans) {
  EXPECT_THROW(GwTree::from_nodes(2, {{1, Kind::NewOnly}, {3, Kind::NoneAlive}}), InvalidArgument);
  EXPECT_THROW(GwTree::from_nodes(2, {{2, Kind::NoneAlive}}), InvalidArgument);
}

TEST(GwTree, FixtureRoundTrip) {
  Rng rng(8);
  const GwTree t = sample_tree({0.6, 0.2, 0.15}, 7, rng);
  std::stringstream ss;
  write_tree(ss, t);
  EXPECT_TRUE(read_tree(ss) == t);
}

TEST(CountProcess, NoExtinctionUnderH3) {
  Rng rng(10);
  const OffspringLaw law{0.2, 0.5, 0.3};
  for (int i = 0; i < 2000; ++i) ASSERT_GT(sample_generation_sizes(law, 20, rng).back(), 0u);
}

TEST(CountProcess, MeanMatchesPower) {
  const OffspringLaw law{0.6, 0.1, 0.1};
  const int N = 20000, r = 8;
  Rng rng(12);
  double s = 0, ss = 0;
  for (int i = 0; i < N; ++i) {
    const double g = static_cast<double>(sample_generation_sizes(law, r, rng).back());
    s += g, ss += g * g;
  }
  const double mean = s / N, se = std::sqrt((ss / N - mean * mean) / N);
  EXPECT_NEAR(mean, std::pow(law.mean(), r), 4 * se);
}

TEST(CountProcess, ExtensionAgreesWithTree) {
  Rng rng(13), ext(14);
  const OffspringLaw law{0.7, 0.1, 0.1};
  const GwTree t = sample_tree(law, 4, rng);
  const auto sizes = extended_generation_sizes(t, law, 8, ext);
  ASSERT_EQ(sizes.size(), 9u);
  for (int r = 0; r <= 4; ++r) EXPECT_EQ(sizes[r], t.generation_size(r));
  std::uint64_t next = 0;
  for (const Node& n : t.generation(4)) next += alive_daughters(n.kind);
  EXPECT_EQ(sizes[5], next);
}
