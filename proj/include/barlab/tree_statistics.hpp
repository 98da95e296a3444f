#pragma once

// Sums and averages of node functions over sets of alive cells.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "barlab/bar_sim.hpp"
#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"

namespace barlab {

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      c_ += (sum_ - t) + x;
    else
      c_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  double value() const noexcept { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

/// G_r (one generation) or T_r (generations 0..r).
enum class SetKind { Generation, Tree };

inline const char* set_kind_name(SetKind k) noexcept {
  return k == SetKind::Generation ? "generation" : "tree";
}

/// E|G_r*| = m^r or E|T_r*| = t_r.
inline double expected_set_size(double m, int r, SetKind kind) {
  auto [gen, cum] = expected_sizes(m, r);
  return kind == SetKind::Generation ? gen : cum;
}

inline std::span<const Node> alive_set(const GwTree& tree, int r, SetKind kind) {
  return kind == SetKind::Generation ? tree.generation(r) : tree.up_to(r);
}

// Support classes of a triangle function (which daughters are alive).
enum ClassMask : unsigned {
  kMaskBoth = 1u << 0,     // S^3
  kMaskNewOnly = 1u << 1,  // S^2 x {dead}
  kMaskOldOnly = 1u << 2,  // S x {dead} x S
  kMaskNone = 1u << 3,     // S x {dead} x {dead}
  kMaskAll = 0xfu,
};

constexpr unsigned mask_of(Kind k) noexcept { return 1u << static_cast<unsigned>(k); }

/// A triangle function restricted to some daughter classes; zero elsewhere.
template <class F>
struct Masked {
  F f;
  unsigned mask = kMaskAll;

  double operator()(const Triangle& t) const {
    return (mask & mask_of(triangle_kind(t))) ? static_cast<double>(f(t)) : 0.0;
  }
};

template <class F>
Masked<F> restrict_to(unsigned mask, F f) {
  return Masked<F>{std::move(f), mask};
}

template <class F>
concept CellFunction = std::invocable<const F&, double>;
template <class F>
concept TriangleFunction = std::invocable<const F&, const Triangle&> && !CellFunction<F>;

namespace detail {
inline void require_resolvable(const PopulationSample& s, Label i, bool triangle) {
  if (i == 0) throw InvalidArgument("label 0 is not a cell");
  const int g = generation_of(i);
  const int limit = triangle ? s.tree.max_depth() - 1 : s.tree.max_depth();
  if (g > limit)
    throw InvalidArgument("cell " + std::to_string(i) + " is not resolvable at observed depth " +
                          std::to_string(s.tree.max_depth()));
}
}  // namespace detail

/// M_J(f): sum of f over the cells of J. Dead cells in J contribute
/// f(dead) = 0; an empty J sums to 0.
template <CellFunction F>
double m_sum(const PopulationSample& s, std::span<const Label> J, const F& f) {
  CompensatedSum acc;
  for (Label i : J) {
    detail::require_resolvable(s, i, false);
    if (auto v = s.value_if_alive(i)) acc += f(*v);
  }
  return acc.value();
}

template <TriangleFunction F>
double m_sum(const PopulationSample& s, std::span<const Label> J, const F& f) {
  CompensatedSum acc;
  for (Label i : J) {
    detail::require_resolvable(s, i, true);
    if (s.tree.contains(i)) acc += f(triangle(s, i));
  }
  return acc.value();
}

/// Number of alive cells of J (J* in the notation of the averages).
inline std::size_t alive_count(const PopulationSample& s, std::span<const Label> J) {
  std::size_t n = 0;
  for (Label i : J) n += s.tree.contains(i) ? 1 : 0;
  return n;
}

/// M_J(f) / |J|. J is expected to hold alive cells (e.g. G_r*, T_r*).
template <class F>
double bar_avg(const PopulationSample& s, std::span<const Label> J, const F& f) {
  if (J.empty()) throw InvalidArgument("bar_avg: empty set");
  return m_sum(s, J, f) / static_cast<double>(J.size());
}

/// M_J(f) / E|J|.
template <class F>
double tilde_avg(const PopulationSample& s, std::span<const Label> J, const F& f,
                 double expected_size) {
  if (!(expected_size > 0.0)) throw InvalidArgument("tilde_avg: expected size must be > 0");
  return m_sum(s, J, f) / expected_size;
}

/// Sum and count of f over G_r* or T_r*, without a label lookup per cell.
struct SetSum {
  double sum = 0.0;
  std::size_t count = 0;
};

template <CellFunction F>
SetSum sum_over(const PopulationSample& s, int r, SetKind kind, const F& f) {
  const auto nodes = alive_set(s.tree, r, kind);
  const auto first = static_cast<std::size_t>(nodes.data() - s.tree.nodes().data());
  CompensatedSum acc;
  for (std::size_t i = first; i < first + nodes.size(); ++i) acc += f(s.values[i]);
  return {acc.value(), nodes.size()};
}

template <TriangleFunction F>
SetSum sum_over(const PopulationSample& s, int r, SetKind kind, const F& f) {
  if (r >= s.tree.max_depth()) throw InvalidArgument("sum_over: daughters of generation r are not observed");
  CompensatedSum acc;
  const auto nodes = alive_set(s.tree, r, kind);
  for (const Node& n : nodes) acc += f(triangle(s, n.label));
  return {acc.value(), nodes.size()};
}

/// m^{-r} |G_r*|, the finite-depth stand-in for W.
inline double w_proxy(const GwTree& tree, const OffspringLaw& law, int r) {
  if (r < 0 || r > tree.max_depth()) throw InvalidArgument("w_proxy: generation out of range");
  const auto size = tree.generation_size(r);
  if (size == 0) return 0.0;  // also covers m = 0
  return static_cast<double>(size) / std::pow(law.mean(), r);
}

}  // namespace barlab
