#pragma once

// Least-squares estimation of theta from cells of T_n* and their daughters.

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "barlab/bar_sim.hpp"
#include "barlab/embedded_chain.hpp"
#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/tree_statistics.hpp"

namespace barlab {

enum class CellClass { Both, NewOnly, OldOnly };

inline const char* cell_class_name(CellClass c) noexcept {
  switch (c) {
    case CellClass::Both: return "both";
    case CellClass::NewOnly: return "new_only";
    case CellClass::OldOnly: return "old_only";
  }
  return "?";
}

/// Sample regression of daughter on mother over one class of cells.
struct ClassFit {
  double alpha = 0.0;
  double beta = 0.0;
  double x_variance = 0.0;  // empirical variance of the mothers, > 0
};

struct ThetaEstimate {
  // (alpha0, beta0) and (alpha1, beta1) share the class T_n^{1,0}.
  std::optional<ClassFit> new_from_both;
  std::optional<ClassFit> old_from_both;
  std::optional<ClassFit> new_only;
  std::optional<ClassFit> old_only;
  std::size_t count_both = 0;
  std::size_t count_new_only = 0;
  std::size_t count_old_only = 0;
  std::vector<CellClass> degenerate;

  bool complete() const noexcept { return degenerate.empty(); }

  /// The eight components in BarParams order; nullopt where unavailable.
  std::array<std::optional<double>, 8> components() const {
    std::array<std::optional<double>, 8> out;
    auto put = [&](std::size_t i, const std::optional<ClassFit>& f) {
      if (f) out[i] = f->alpha, out[i + 1] = f->beta;
    };
    put(0, new_from_both);
    put(2, old_from_both);
    put(4, new_only);
    put(6, old_only);
    return out;
  }
};

namespace detail {

/// Two-pass regression of y on x; nullopt when fewer than two points or the
/// x values have no spread.
inline std::optional<ClassFit> regress(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < n; ++i) sx += x[i], sy += y[i];
  const double mx = sx.value() / static_cast<double>(n);
  const double my = sy.value() / static_cast<double>(n);
  CompensatedSum sxx, sxy;
  bool spread = false;
  for (std::size_t i = 0; i < n; ++i) {
    spread = spread || x[i] != x[0];
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!spread || !(sxx.value() > 0.0)) return std::nullopt;
  ClassFit fit;
  fit.alpha = sxy.value() / sxx.value();
  fit.beta = my - fit.alpha * mx;
  fit.x_variance = sxx.value() / static_cast<double>(n);
  return fit;
}

}  // namespace detail

/// theta-hat_n from the cells of T_n* and their daughters (the sub-tree
/// T_{n+1}*). Deeper data in the sample is ignored. Classes that are empty,
/// singletons or have constant mothers are reported in `degenerate`.
inline ThetaEstimate lse(const PopulationSample& sample, int n) {
  if (n < 0) throw InvalidArgument("lse: negative generation");
  if (sample.tree.max_depth() < n + 1)
    throw InvalidArgument("lse: sample depth " + std::to_string(sample.tree.max_depth()) +
                          " does not reach generation n+1 = " + std::to_string(n + 1));
  std::vector<double> xb, y0b, y1b, xn, yn, xo, yo;
  const auto nodes = sample.tree.up_to(n);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Label l = nodes[i].label;
    const double x = sample.values[i];
    switch (nodes[i].kind) {
      case Kind::BothAlive:
        xb.push_back(x);
        y0b.push_back(sample.value(2 * l));
        y1b.push_back(sample.value(2 * l + 1));
        break;
      case Kind::NewOnly:
        xn.push_back(x);
        yn.push_back(sample.value(2 * l));
        break;
      case Kind::OldOnly:
        xo.push_back(x);
        yo.push_back(sample.value(2 * l + 1));
        break;
      case Kind::NoneAlive: break;
    }
  }
  ThetaEstimate est;
  est.count_both = xb.size();
  est.count_new_only = xn.size();
  est.count_old_only = xo.size();
  est.new_from_both = detail::regress(xb, y0b);
  est.old_from_both = detail::regress(xb, y1b);
  est.new_only = detail::regress(xn, yn);
  est.old_only = detail::regress(xo, yo);
  if (!est.new_from_both) est.degenerate.push_back(CellClass::Both);
  if (!est.new_only) est.degenerate.push_back(CellClass::NewOnly);
  if (!est.old_only) est.degenerate.push_back(CellClass::OldOnly);
  return est;
}

/// Euclidean norm of theta-hat - theta over all eight components.
inline double estimation_error(const ThetaEstimate& est, const BarParams& truth) {
  if (!est.complete()) {
    std::string which;
    for (CellClass c : est.degenerate) which += std::string(which.empty() ? "" : ", ") + cell_class_name(c);
    throw UnavailableEstimate("estimation_error: degenerate class(es): " + which);
  }
  const auto got = est.components();
  const auto want = truth.as_array();
  double ss = 0.0;
  for (std::size_t i = 0; i < 8; ++i) ss += (*got[i] - want[i]) * (*got[i] - want[i]);
  return std::sqrt(ss);
}

/// Bar-averages over T_n* of the regression functions of the alpha0 error
/// decomposition, and B_n.
struct RegressionFunctionals {
  double g1 = 0.0;  // (x y - x (alpha0 x + beta0)) 1_{S^3}
  double g2 = 0.0;  // (y - alpha0 x - beta0) 1_{S^3}
  double h1 = 0.0;  // x 1_{S^3}
  double h2 = 0.0;  // x^2 1_{S^3}
  double both_fraction = 0.0;  // |T_n^{1,0}| / |T_n*|
  double b_n = 0.0;            // both_fraction * h2 - h1^2
};

inline RegressionFunctionals regression_functionals(const PopulationSample& sample, int n,
                                                    const BarParams& truth) {
  if (n < 0 || sample.tree.max_depth() < n + 1)
    throw InvalidArgument("regression_functionals: sample does not reach generation n+1");
  const double a0 = truth.alpha0, b0 = truth.beta0;
  auto g1 = restrict_to(kMaskBoth, [=](const Triangle& t) {
    return t.mother * *t.new_daughter - t.mother * (a0 * t.mother + b0);
  });
  auto g2 = restrict_to(kMaskBoth, [=](const Triangle& t) { return *t.new_daughter - a0 * t.mother - b0; });
  auto h1 = restrict_to(kMaskBoth, [](const Triangle& t) { return t.mother; });
  auto h2 = restrict_to(kMaskBoth, [](const Triangle& t) { return t.mother * t.mother; });
  auto one = restrict_to(kMaskBoth, [](const Triangle&) { return 1.0; });

  RegressionFunctionals rf;
  const auto s_g1 = sum_over(sample, n, SetKind::Tree, g1);
  const double size = static_cast<double>(s_g1.count);
  rf.g1 = s_g1.sum / size;
  rf.g2 = sum_over(sample, n, SetKind::Tree, g2).sum / size;
  rf.h1 = sum_over(sample, n, SetKind::Tree, h1).sum / size;
  rf.h2 = sum_over(sample, n, SetKind::Tree, h2).sum / size;
  rf.both_fraction = sum_over(sample, n, SetKind::Tree, one).sum / size;
  rf.b_n = rf.both_fraction * rf.h2 - rf.h1 * rf.h1;
  return rf;
}

/// Population value of B_n: p10^2 (mu2 - mu1^2).
inline double b_n_target(const OffspringLaw& law, const StationaryMoments& sm) {
  return law.p10 * law.p10 * (sm.mu2 - sm.mu1 * sm.mu1);
}

inline void write_estimate_csv(std::ostream& os, const ThetaEstimate& est) {
  os << "name,value\n";
  const auto c = est.components();
  char buf[64];
  for (std::size_t i = 0; i < 8; ++i) {
    os << BarParams::kNames[i] << ',';
    if (c[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", *c[i]);
      os << buf;
    } else {
      os << "NA";
    }
    os << '\n';
  }
  os << "count_both," << est.count_both << '\n';
  os << "count_new_only," << est.count_new_only << '\n';
  os << "count_old_only," << est.count_old_only << '\n';
}

}  // namespace barlab
