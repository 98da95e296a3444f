#pragma once

// Binary Galton-Watson trees of alive cells, labelled 1, 2n, 2n+1.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "barlab/error.hpp"
#include "barlab/random.hpp"

namespace barlab {

/// Four-outcome reproduction law of a cell: both daughters alive (p10),
/// only the new pole 2n alive (p0), only the old pole 2n+1 alive (p1).
struct OffspringLaw {
  double p10 = 0.0;
  double p0 = 0.0;
  double p1 = 0.0;

  static constexpr double kH3Tolerance = 1e-12;

  void validate() const {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(p10) || !in_unit(p0) || !in_unit(p1))
      throw InvalidArgument("offspring law: each probability must lie in [0,1]");
    if (p10 + p0 + p1 > 1.0 + kH3Tolerance)
      throw InvalidArgument("offspring law: p10 + p0 + p1 must not exceed 1");
  }

  double none_alive() const noexcept { return std::max(0.0, 1.0 - p10 - p0 - p1); }
  double mean() const noexcept { return 2.0 * p10 + p0 + p1; }
  bool supercritical() const noexcept { return mean() > 1.0; }
  /// m > sqrt(2), hypothesis H2.
  bool strong() const noexcept { return mean() > std::sqrt(2.0); }
  /// No cell dies childless, hypothesis H3.
  bool h3() const noexcept { return std::abs(p10 + p0 + p1 - 1.0) <= kH3Tolerance; }
};

inline double mean_offspring(const OffspringLaw& law) {
  law.validate();
  return law.mean();
}

/// (E|G_r*|, E|T_r*|) = (m^r, (m^{r+1}-1)/(m-1)).
inline std::pair<double, double> expected_sizes(double m, int r) {
  if (!(m > 1.0)) throw InvalidArgument("expected_sizes: requires m > 1");
  if (r < 0) throw InvalidArgument("expected_sizes: negative generation");
  const double gen = std::pow(m, r);
  const double cum = (std::pow(m, r + 1) - 1.0) / (m - 1.0);
  return {gen, cum};
}

/// Reproduction generating function of |G_r*|.
inline double generating_function(const OffspringLaw& law, double z) {
  law.validate();
  if (!(z >= 0.0 && z <= 1.0)) throw InvalidArgument("generating_function: z outside [0,1]");
  return law.none_alive() + (law.p0 + law.p1) * z + law.p10 * z * z;
}

enum class Kind : std::uint8_t { BothAlive = 0, NewOnly = 1, OldOnly = 2, NoneAlive = 3 };

constexpr bool has_new_daughter(Kind k) noexcept {
  return k == Kind::BothAlive || k == Kind::NewOnly;
}
constexpr bool has_old_daughter(Kind k) noexcept {
  return k == Kind::BothAlive || k == Kind::OldOnly;
}
constexpr int alive_daughters(Kind k) noexcept {
  return int{has_new_daughter(k)} + int{has_old_daughter(k)};
}

constexpr std::string_view kind_name(Kind k) noexcept {
  switch (k) {
    case Kind::BothAlive: return "both";
    case Kind::NewOnly: return "new";
    case Kind::OldOnly: return "old";
    case Kind::NoneAlive: return "none";
  }
  return "none";
}

inline Kind parse_kind(std::string_view s) {
  for (Kind k : {Kind::BothAlive, Kind::NewOnly, Kind::OldOnly, Kind::NoneAlive})
    if (kind_name(k) == s) return k;
  throw InvalidArgument("unknown cell kind '" + std::string(s) + "'");
}

using Label = std::uint64_t;

constexpr int generation_of(Label label) noexcept {
  return static_cast<int>(std::bit_width(label)) - 1;
}

struct Node {
  Label label = 1;
  Kind kind = Kind::NoneAlive;
};

/// Deepest generation any tree may carry; labels stay well inside 64 bits.
inline constexpr int kMaxTreeDepth = 48;

/// Alive cells of a binary GW tree up to generation max_depth.
///
/// Nodes are stored generation-major with labels ascending inside each
/// generation. Dead cells are not stored; the kind of a mother says which
/// daughters exist. Nodes of generation max_depth carry a kind but their
/// daughters are not part of the tree.
class GwTree {
 public:
  /// Build and validate from node records in any order.
  static GwTree from_nodes(int max_depth, std::vector<Node> nodes) {
    if (max_depth < 0 || max_depth > kMaxTreeDepth)
      throw InvalidArgument("tree: max_depth out of range");
    std::sort(nodes.begin(), nodes.end(),
              [](const Node& a, const Node& b) { return a.label < b.label; });
    GwTree t;
    t.max_depth_ = max_depth;
    t.nodes_ = std::move(nodes);
    t.rebuild_offsets();
    t.check_invariants();
    return t;
  }

  int max_depth() const noexcept { return max_depth_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const Node> nodes() const noexcept { return nodes_; }

  /// Alive cells of generation r (G_r*).
  std::span<const Node> generation(int r) const {
    check_generation(r);
    return std::span<const Node>(nodes_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
  }
  /// Alive cells of generations 0..r (T_r*).
  std::span<const Node> up_to(int r) const {
    check_generation(r);
    return std::span<const Node>(nodes_).first(offsets_[r + 1]);
  }

  std::size_t generation_size(int r) const { return generation(r).size(); }
  std::size_t cumulative_size(int r) const { return up_to(r).size(); }

  /// Position of a label in nodes(), if alive.
  std::optional<std::size_t> index_of(Label label) const noexcept {
    if (label == 0) return std::nullopt;
    const int g = generation_of(label);
    if (g > max_depth_) return std::nullopt;
    auto first = nodes_.begin() + static_cast<std::ptrdiff_t>(offsets_[g]);
    auto last = nodes_.begin() + static_cast<std::ptrdiff_t>(offsets_[g + 1]);
    auto it = std::lower_bound(first, last, label,
                               [](const Node& n, Label l) { return n.label < l; });
    if (it == last || it->label != label) return std::nullopt;
    return static_cast<std::size_t>(it - nodes_.begin());
  }
  bool contains(Label label) const noexcept { return index_of(label).has_value(); }

  Kind kind_of(Label label) const {
    auto i = index_of(label);
    if (!i) throw InvalidArgument("tree: label " + std::to_string(label) + " is not alive");
    return nodes_[*i].kind;
  }

  bool operator==(const GwTree& o) const noexcept {
    return max_depth_ == o.max_depth_ &&
           std::equal(nodes_.begin(), nodes_.end(), o.nodes_.begin(), o.nodes_.end(),
                      [](const Node& a, const Node& b) {
                        return a.label == b.label && a.kind == b.kind;
                      });
  }

 private:
  friend GwTree sample_tree(const OffspringLaw&, int, Rng&);

  void check_generation(int r) const {
    if (r < 0 || r > max_depth_)
      throw InvalidArgument("tree: generation " + std::to_string(r) + " outside [0," +
                            std::to_string(max_depth_) + "]");
  }

  void rebuild_offsets() {
    offsets_.assign(static_cast<std::size_t>(max_depth_) + 2, nodes_.size());
    offsets_[0] = 0;
    std::size_t i = 0;
    for (int g = 0; g <= max_depth_; ++g) {
      offsets_[g] = i;
      while (i < nodes_.size() && generation_of(nodes_[i].label) == g) ++i;
    }
    offsets_[max_depth_ + 1] = i;
    if (i != nodes_.size()) throw InvalidArgument("tree: node deeper than max_depth");
  }

  void check_invariants() const {
    if (nodes_.empty() || nodes_.front().label != 1)
      throw InvalidArgument("tree: root (label 1) missing");
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      if (nodes_[i].label == nodes_[i - 1].label)
        throw InvalidArgument("tree: duplicate label " + std::to_string(nodes_[i].label));
    }
    for (const Node& n : nodes_) {
      if (n.label == 1) continue;
      auto p = index_of(n.label / 2);
      if (!p) throw InvalidArgument("tree: parent of " + std::to_string(n.label) + " is dead");
      const Kind pk = nodes_[*p].kind;
      const bool ok = (n.label % 2 == 0) ? has_new_daughter(pk) : has_old_daughter(pk);
      if (!ok)
        throw InvalidArgument("tree: kind of " + std::to_string(n.label / 2) +
                              " forbids daughter " + std::to_string(n.label));
    }
    // Every daughter promised by an interior mother must be stored.
    for (const Node& n : nodes_) {
      if (generation_of(n.label) >= max_depth_) continue;
      if (has_new_daughter(n.kind) && !contains(2 * n.label))
        throw InvalidArgument("tree: missing daughter " + std::to_string(2 * n.label));
      if (has_old_daughter(n.kind) && !contains(2 * n.label + 1))
        throw InvalidArgument("tree: missing daughter " + std::to_string(2 * n.label + 1));
    }
  }

  int max_depth_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::size_t> offsets_;
};

/// Kind from one uniform draw: [0,p10) both, [p10,p10+p0) new, then old, then none.
inline Kind draw_kind(const OffspringLaw& law, double u) noexcept {
  if (u < law.p10) return Kind::BothAlive;
  if (u < law.p10 + law.p0) return Kind::NewOnly;
  if (u < law.p10 + law.p0 + law.p1) return Kind::OldOnly;
  return Kind::NoneAlive;
}

/// Sample the alive tree up to max_depth.
///
/// Reproducibility contract: exactly one 64-bit draw from `rng` per alive
/// node, consumed in label order (generation-major). The root is alive.
inline GwTree sample_tree(const OffspringLaw& law, int max_depth, Rng& rng) {
  law.validate();
  if (max_depth < 0 || max_depth > kMaxTreeDepth)
    throw InvalidArgument("sample_tree: max_depth out of range");
  GwTree t;
  t.max_depth_ = max_depth;
  t.offsets_.assign(static_cast<std::size_t>(max_depth) + 2, 0);
  t.nodes_.push_back(Node{1, Kind::NoneAlive});
  std::size_t begin = 0;
  for (int g = 0; g <= max_depth; ++g) {
    const std::size_t end = t.nodes_.size();
    t.offsets_[g] = begin;
    for (std::size_t i = begin; i < end; ++i) {
      const Kind k = draw_kind(law, rng.uniform());
      t.nodes_[i].kind = k;
      if (g == max_depth) continue;
      const Label l = t.nodes_[i].label;
      if (has_new_daughter(k)) t.nodes_.push_back(Node{2 * l, Kind::NoneAlive});
      if (has_old_daughter(k)) t.nodes_.push_back(Node{2 * l + 1, Kind::NoneAlive});
    }
    begin = end;
  }
  t.offsets_[max_depth + 1] = t.nodes_.size();
  return t;
}

inline std::vector<Label> labels_of(std::span<const Node> nodes) {
  std::vector<Label> out;
  out.reserve(nodes.size());
  for (const Node& n : nodes) out.push_back(n.label);
  return out;
}

/// Labels of G_r*.
inline std::vector<Label> generation_nodes(const GwTree& tree, int r) {
  return labels_of(tree.generation(r));
}
/// Labels of T_r*.
inline std::vector<Label> cumulative_nodes(const GwTree& tree, int r) {
  return labels_of(tree.up_to(r));
}

/// Cells of T_n* split by which daughters live. NoneAlive cells are in no set.
struct CellClasses {
  std::vector<Label> both;      // T_n^{1,0}
  std::vector<Label> new_only;  // T_n^0
  std::vector<Label> old_only;  // T_n^1
};

inline CellClasses classify_cells(const GwTree& tree, int n) {
  if (n < 0 || n >= tree.max_depth())
    throw InvalidArgument("classify_cells: need 0 <= n < max_depth so daughters are resolvable");
  CellClasses c;
  for (const Node& node : tree.up_to(n)) {
    switch (node.kind) {
      case Kind::BothAlive: c.both.push_back(node.label); break;
      case Kind::NewOnly: c.new_only.push_back(node.label); break;
      case Kind::OldOnly: c.old_only.push_back(node.label); break;
      case Kind::NoneAlive: break;
    }
  }
  return c;
}

/// Next generation size given a generation's kind counts.
struct KindCounts {
  std::uint64_t both = 0, new_only = 0, old_only = 0, none = 0;
  std::uint64_t daughters() const noexcept { return 2 * both + new_only + old_only; }
};

/// Multinomial split of `alive` cells into kinds.
inline KindCounts draw_kind_counts(const OffspringLaw& law, std::uint64_t alive, Rng& rng) {
  KindCounts c;
  std::uint64_t left = alive;
  double mass = 1.0;
  auto take = [&](double p) -> std::uint64_t {
    if (left == 0 || p <= 0.0) return 0;
    const double q = std::min(1.0, p / mass);
    mass -= p;
    if (q >= 1.0) {
      const auto all = left;
      left = 0;
      return all;
    }
    std::binomial_distribution<std::uint64_t> bin(left, q);
    const auto k = bin(rng);
    left -= k;
    return k;
  };
  c.both = take(law.p10);
  c.new_only = take(law.p0);
  if (law.none_alive() <= OffspringLaw::kH3Tolerance) {
    c.old_only = left;
    left = 0;
  } else {
    c.old_only = take(law.p1);
  }
  c.none = left;
  return c;
}

/// |G_0*|, ..., |G_depth*| of a GW process started from one cell, simulated
/// at the level of generation counts (no tree is materialised).
inline std::vector<std::uint64_t> sample_generation_sizes(const OffspringLaw& law, int depth,
                                                          Rng& rng) {
  law.validate();
  if (depth < 0) throw InvalidArgument("sample_generation_sizes: negative depth");
  std::vector<std::uint64_t> sizes{1};
  sizes.reserve(static_cast<std::size_t>(depth) + 1);
  for (int g = 0; g < depth; ++g) sizes.push_back(draw_kind_counts(law, sizes.back(), rng).daughters());
  return sizes;
}

/// Continue the generation counts of `tree` past its last generation.
/// Returns |G_r*| for r = 0..to_depth; entries up to max_depth are read off
/// the tree, generation max_depth+1 follows from the recorded kinds, deeper
/// ones are drawn as a GW count process from `rng`.
inline std::vector<std::uint64_t> extended_generation_sizes(const GwTree& tree,
                                                            const OffspringLaw& law,
                                                            int to_depth, Rng& rng) {
  std::vector<std::uint64_t> sizes;
  const int d = tree.max_depth();
  for (int g = 0; g <= std::min(d, to_depth); ++g) sizes.push_back(tree.generation_size(g));
  if (to_depth <= d) return sizes;
  std::uint64_t next = 0;
  for (const Node& n : tree.generation(d)) next += static_cast<std::uint64_t>(alive_daughters(n.kind));
  sizes.push_back(next);
  for (int g = d + 1; g < to_depth; ++g) sizes.push_back(draw_kind_counts(law, sizes.back(), rng).daughters());
  return sizes;
}

// Fixture format: optional "# max_depth,<d>" line, then "label,generation,kind".

inline void write_tree(std::ostream& os, const GwTree& tree) {
  os << "# max_depth," << tree.max_depth() << '\n';
  for (const Node& n : tree.nodes())
    os << n.label << ',' << generation_of(n.label) << ',' << kind_name(n.kind) << '\n';
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}
}  // namespace detail

inline GwTree read_tree(std::istream& is) {
  std::vector<Node> nodes;
  std::optional<int> max_depth;
  int deepest = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto f = detail::split_csv(line.substr(1));
      if (f.size() == 2 && f[0].find("max_depth") != std::string::npos) max_depth = std::stoi(f[1]);
      continue;
    }
    auto f = detail::split_csv(line);
    if (f.size() != 3) throw InvalidArgument("tree fixture line " + std::to_string(lineno) + ": expected 3 fields");
    Node n{std::stoull(f[0]), parse_kind(f[2])};
    if (n.label == 0 || std::stoi(f[1]) != generation_of(n.label))
      throw InvalidArgument("tree fixture line " + std::to_string(lineno) + ": generation mismatch");
    deepest = std::max(deepest, generation_of(n.label));
    nodes.push_back(n);
  }
  return GwTree::from_nodes(max_depth.value_or(deepest), std::move(nodes));
}

}  // namespace barlab
