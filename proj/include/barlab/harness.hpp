#pragma once

// Configuration, dispatch and reporting behind the barlab command line.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "barlab/bar_sim.hpp"
#include "barlab/bounds.hpp"
#include "barlab/deviation_lab.hpp"
#include "barlab/embedded_chain.hpp"
#include "barlab/error.hpp"
#include "barlab/gw_tree.hpp"
#include "barlab/lse.hpp"
#include "barlab/tree_statistics.hpp"

namespace barlab {

using json = nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"simulate", "estimate", "deviation", "chain", "bounds", "report"};
  return c;
}

struct ConfigError {
  std::string field;
  std::string reason;
};

/// Raised by run() when validation fails; carries every violation.
class ConfigInvalid : public std::runtime_error {
 public:
  explicit ConfigInvalid(std::vector<ConfigError> errors)
      : std::runtime_error(summary(errors)), errors_(std::move(errors)) {}
  const std::vector<ConfigError>& errors() const noexcept { return errors_; }

 private:
  static std::string summary(const std::vector<ConfigError>& errors) {
    std::string s = "invalid configuration:";
    for (const auto& e : errors) s += " [" + e.field + ": " + e.reason + "]";
    return s;
  }
  std::vector<ConfigError> errors_;
};

// ---------------------------------------------------------------------------
// Schema. Every object in a config may only carry the keys listed here.

namespace config {

inline const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"", {"command", "seed", "output", "model", "experiment", "constants", "chain"}},
      {"model", {"law", "params", "noise", "init"}},
      {"model.law", {"p10", "p0", "p1"}},
      {"model.params", {"alpha0", "beta0", "alpha1", "beta1", "alpha0p", "beta0p", "alpha1p", "beta1p"}},
      {"model.noise", {"mode", "sigma", "rho", "sigma0", "sigma1", "trunc_k"}},
      {"model.init", {"kind", "x", "lo", "hi"}},
      {"experiment",
       {"kind", "depth", "n", "delta_grid", "r_grid", "n_rep", "set_kind", "centered", "subtract_mean", "f", "a",
        "b", "gamma", "w_depth_offset", "long_run"}},
      {"experiment.f", {"form", "slope", "intercept", "threshold"}},
      {"experiment.long_run", {"burn_in", "length", "batches"}},
      {"constants", {"c", "c_prime", "c_dprime", "c0", "k0", "c1", "c2", "c3", "p", "q"}},
      {"chain", {"x_grid", "k_max", "n_rep", "f", "long_run"}},
      {"chain.f", {"form", "slope", "intercept", "threshold"}},
      {"chain.long_run", {"burn_in", "length", "batches"}},
  };
  return s;
}

inline void check_keys(const json& node, const std::string& path, std::vector<ConfigError>& errors) {
  const auto& sch = schema();
  auto it = sch.find(path);
  if (it == sch.end()) return;
  if (!node.is_object()) {
    errors.push_back({path.empty() ? "<root>" : path, "must be an object"});
    return;
  }
  for (const auto& [key, value] : node.items()) {
    const std::string child = path.empty() ? key : path + "." + key;
    if (!it->second.count(key)) {
      errors.push_back({child, "unknown key"});
      continue;
    }
    if (sch.count(child)) check_keys(value, child, errors);
  }
}

/// Apply "a.b.c=value"; value is parsed as JSON, falling back to a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &cfg;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

/// Collects errors instead of throwing; getters fall back to defaults.
class Reader {
 public:
  explicit Reader(std::vector<ConfigError>& errors) : errors_(errors) {}

  void fail(const std::string& field, const std::string& reason) { errors_.push_back({field, reason}); }

  const json* find(const json& root, const std::string& path) const {
    const json* node = &root;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
    }
    return node;
  }

  double number(const json& root, const std::string& path, double fallback) {
    const json* n = find(root, path);
    if (!n) return fallback;
    if (!n->is_number()) {
      fail(path, "must be a number");
      return fallback;
    }
    return n->get<double>();
  }
  std::int64_t integer(const json& root, const std::string& path, std::int64_t fallback) {
    const json* n = find(root, path);
    if (!n) return fallback;
    if (!n->is_number_integer()) {
      fail(path, "must be an integer");
      return fallback;
    }
    return n->get<std::int64_t>();
  }
  bool boolean(const json& root, const std::string& path, bool fallback) {
    const json* n = find(root, path);
    if (!n) return fallback;
    if (!n->is_boolean()) {
      fail(path, "must be true or false");
      return fallback;
    }
    return n->get<bool>();
  }
  std::string string(const json& root, const std::string& path, const std::string& fallback) {
    const json* n = find(root, path);
    if (!n) return fallback;
    if (!n->is_string()) {
      fail(path, "must be a string");
      return fallback;
    }
    return n->get<std::string>();
  }
  std::vector<double> numbers(const json& root, const std::string& path) {
    std::vector<double> out;
    const json* n = find(root, path);
    if (!n) return out;
    if (!n->is_array()) {
      fail(path, "must be an array of numbers");
      return out;
    }
    for (const auto& v : *n) {
      if (!v.is_number()) {
        fail(path, "must be an array of numbers");
        return {};
      }
      out.push_back(v.get<double>());
    }
    return out;
  }
  std::vector<int> integers(const json& root, const std::string& path) {
    std::vector<int> out;
    const json* n = find(root, path);
    if (!n) return out;
    if (!n->is_array()) {
      fail(path, "must be an array of integers");
      return out;
    }
    for (const auto& v : *n) {
      if (!v.is_number_integer()) {
        fail(path, "must be an array of integers");
        return {};
      }
      out.push_back(v.get<int>());
    }
    return out;
  }

 private:
  std::vector<ConfigError>& errors_;
};

}  // namespace config

/// Everything a run needs, decoded from the config.
struct ExperimentConfig {
  std::string command;
  std::uint64_t seed = 1;
  OffspringLaw law{0.9, 0.05, 0.05};
  BarParams params;
  NoiseSpec noise;
  InitialLaw init = InitialLaw::point(0.0);
  BoundConstants constants;
  // experiment block
  ExperimentKind kind = ExperimentKind::Plain;
  int depth = 5;
  int n = 5;
  std::vector<double> deltas;
  std::vector<int> depths;
  std::uint64_t n_rep = 1000;
  SetKind set_kind = SetKind::Generation;
  bool centered = false;
  bool subtract_mean = false;
  NodeFn f;
  int w_depth_offset = 6;
  LongRunOptions long_run;
  // chain block
  std::vector<double> x_grid;
  int k_max = 25;
  std::uint64_t chain_n_rep = 10000;
  NodeFn chain_f;
  LongRunOptions chain_long_run;

  DeviationSpec deviation_spec() const {
    DeviationSpec s;
    s.kind = kind;
    s.law = law;
    s.params = params;
    s.noise = noise;
    s.init = init;
    s.f = f;
    s.subtract_mean = subtract_mean;
    s.centered = centered;
    s.deltas = deltas;
    s.depths = depths;
    s.n_rep = n_rep;
    s.set_kind = set_kind;
    s.a = constants.a;
    s.w_depth_offset = w_depth_offset;
    s.seed = seed;
    s.long_run = long_run;
    return s;
  }
};

namespace config {

inline NodeFn read_fn(Reader& rd, const json& cfg, const std::string& path) {
  NodeFn f;
  const std::string form = rd.string(cfg, path + ".form", "affine");
  if (form == "affine") f.form = NodeFn::Form::Affine;
  else if (form == "square") f.form = NodeFn::Form::Square;
  else if (form == "indicator_above") f.form = NodeFn::Form::IndicatorAbove;
  else rd.fail(path + ".form", "must be affine, square or indicator_above");
  f.slope = rd.number(cfg, path + ".slope", 1.0);
  f.intercept = rd.number(cfg, path + ".intercept", 0.0);
  f.threshold = rd.number(cfg, path + ".threshold", 0.0);
  return f;
}

inline LongRunOptions read_long_run(Reader& rd, const json& cfg, const std::string& path) {
  LongRunOptions o;
  o.burn_in = rd.integer(cfg, path + ".burn_in", o.burn_in);
  o.length = rd.integer(cfg, path + ".length", o.length);
  o.batches = static_cast<int>(rd.integer(cfg, path + ".batches", o.batches));
  if (o.burn_in < 0) rd.fail(path + ".burn_in", "must be >= 0");
  if (o.batches < 2) rd.fail(path + ".batches", "must be >= 2");
  if (o.length < o.batches) rd.fail(path + ".length", "must be >= batches");
  return o;
}

/// Run a module-level validator and record its message against `field`.
template <class Fn>
void guard(Reader& rd, const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    rd.fail(field, e.what());
  }
}

}  // namespace config

/// Decode and check a config for `command`. Reports every violation found.
inline ExperimentConfig decode(const json& cfg, const std::string& command, std::vector<ConfigError>& errors) {
  using namespace config;
  ExperimentConfig c;
  c.command = command;
  check_keys(cfg, "", errors);
  if (std::find(commands().begin(), commands().end(), command) == commands().end())
    errors.push_back({"command", "unknown command '" + command + "'"});
  Reader rd(errors);
  if (const json* s = rd.find(cfg, "seed")) {
    if (s->is_number_unsigned() || (s->is_number_integer() && s->get<std::int64_t>() >= 0))
      c.seed = s->get<std::uint64_t>();
    else
      rd.fail("seed", "must be a non-negative 64-bit integer");
  }

  c.law = {rd.number(cfg, "model.law.p10", c.law.p10), rd.number(cfg, "model.law.p0", c.law.p0),
           rd.number(cfg, "model.law.p1", c.law.p1)};
  guard(rd, "model.law", [&] { c.law.validate(); });

  auto& p = c.params;
  p.alpha0 = rd.number(cfg, "model.params.alpha0", 0.0);
  p.beta0 = rd.number(cfg, "model.params.beta0", 0.0);
  p.alpha1 = rd.number(cfg, "model.params.alpha1", 0.0);
  p.beta1 = rd.number(cfg, "model.params.beta1", 0.0);
  p.alpha0p = rd.number(cfg, "model.params.alpha0p", 0.0);
  p.beta0p = rd.number(cfg, "model.params.beta0p", 0.0);
  p.alpha1p = rd.number(cfg, "model.params.alpha1p", 0.0);
  p.beta1p = rd.number(cfg, "model.params.beta1p", 0.0);
  guard(rd, "model.params", [&] { p.validate(); });

  auto& nz = c.noise;
  const std::string mode = rd.string(cfg, "model.noise.mode", "gaussian");
  if (mode == "gaussian") nz.mode = NoiseMode::Gaussian;
  else if (mode == "two_point") nz.mode = NoiseMode::TwoPoint;
  else if (mode == "noiseless") nz.mode = NoiseMode::Noiseless;
  else rd.fail("model.noise.mode", "must be gaussian, two_point or noiseless");
  nz.sigma = rd.number(cfg, "model.noise.sigma", nz.sigma);
  nz.rho = rd.number(cfg, "model.noise.rho", nz.rho);
  nz.sigma0 = rd.number(cfg, "model.noise.sigma0", nz.sigma0);
  nz.sigma1 = rd.number(cfg, "model.noise.sigma1", nz.sigma1);
  nz.trunc_k = rd.number(cfg, "model.noise.trunc_k", nz.trunc_k);
  if (!(nz.sigma > 0.0) || !(nz.sigma0 > 0.0) || !(nz.sigma1 > 0.0))
    rd.fail("model.noise", "sigma, sigma0 and sigma1 must be > 0");
  if (!(nz.rho > -1.0 && nz.rho < 1.0))
    rd.fail("model.noise.rho", "|rho| < 1 is required for the pair covariance Gamma to be positive definite");
  if (!(nz.trunc_k > 0.0)) rd.fail("model.noise.trunc_k", "must be > 0");

  const std::string ik = rd.string(cfg, "model.init.kind", "point");
  if (ik == "point") {
    c.init = InitialLaw::point(rd.number(cfg, "model.init.x", 0.0));
  } else if (ik == "uniform") {
    c.init = InitialLaw::uniform(rd.number(cfg, "model.init.lo", 0.0), rd.number(cfg, "model.init.hi", 0.0));
  } else {
    rd.fail("model.init.kind", "must be point or uniform");
  }
  guard(rd, "model.init", [&] { c.init.validate(); });

  // constants and conditioning parameters
  auto& k = c.constants;
  k.c = rd.number(cfg, "constants.c", k.c);
  k.c_prime = rd.number(cfg, "constants.c_prime", k.c_prime);
  k.c_dprime = rd.number(cfg, "constants.c_dprime", k.c_dprime);
  k.c0 = rd.number(cfg, "constants.c0", k.c0);
  k.k0 = static_cast<int>(rd.integer(cfg, "constants.k0", k.k0));
  k.c1 = rd.number(cfg, "constants.c1", k.c1);
  k.c2 = rd.number(cfg, "constants.c2", k.c2);
  k.c3 = rd.number(cfg, "constants.c3", k.c3);
  k.p = rd.number(cfg, "constants.p", k.p);
  k.q = rd.number(cfg, "constants.q", k.q);
  k.a = rd.number(cfg, "experiment.a", k.a);
  k.b = rd.number(cfg, "experiment.b", k.b);
  k.gamma = rd.number(cfg, "experiment.gamma", k.gamma);
  guard(rd, "constants", [&] { k.validate(); });

  // experiment block
  const std::string kind = rd.string(cfg, "experiment.kind", "plain");
  if (kind == "plain") c.kind = ExperimentKind::Plain;
  else if (kind == "conditional") c.kind = ExperimentKind::Conditional;
  else if (kind == "theta") c.kind = ExperimentKind::Theta;
  else if (kind == "gw_lln") c.kind = ExperimentKind::GwLln;
  else rd.fail("experiment.kind", "must be plain, conditional, theta or gw_lln");
  c.depth = static_cast<int>(rd.integer(cfg, "experiment.depth", c.depth));
  c.n = static_cast<int>(rd.integer(cfg, "experiment.n", c.n));
  c.deltas = rd.numbers(cfg, "experiment.delta_grid");
  c.depths = rd.integers(cfg, "experiment.r_grid");
  const std::int64_t n_rep = rd.integer(cfg, "experiment.n_rep", static_cast<std::int64_t>(c.n_rep));
  if (n_rep <= 0) rd.fail("experiment.n_rep", "must be > 0");
  else c.n_rep = static_cast<std::uint64_t>(n_rep);
  const std::string sk = rd.string(cfg, "experiment.set_kind", "generation");
  if (sk == "generation") c.set_kind = SetKind::Generation;
  else if (sk == "tree") c.set_kind = SetKind::Tree;
  else rd.fail("experiment.set_kind", "must be generation or tree");
  c.centered = rd.boolean(cfg, "experiment.centered", false);
  c.subtract_mean = rd.boolean(cfg, "experiment.subtract_mean", false);
  c.f = read_fn(rd, cfg, "experiment.f");
  c.w_depth_offset = static_cast<int>(rd.integer(cfg, "experiment.w_depth_offset", 6));
  if (c.w_depth_offset < 0) rd.fail("experiment.w_depth_offset", "must be >= 0");
  c.long_run = read_long_run(rd, cfg, "experiment.long_run");

  // chain block
  c.x_grid = rd.numbers(cfg, "chain.x_grid");
  c.k_max = static_cast<int>(rd.integer(cfg, "chain.k_max", c.k_max));
  const std::int64_t cn = rd.integer(cfg, "chain.n_rep", static_cast<std::int64_t>(c.chain_n_rep));
  if (cn < 2) rd.fail("chain.n_rep", "must be >= 2");
  else c.chain_n_rep = static_cast<std::uint64_t>(cn);
  c.chain_f = read_fn(rd, cfg, "chain.f");
  c.chain_long_run = read_long_run(rd, cfg, "chain.long_run");

  // command-specific requirements
  const double m = c.law.mean();
  auto need_grids = [&] {
    if (c.deltas.empty()) rd.fail("experiment.delta_grid", "must not be empty");
    for (double d : c.deltas)
      if (!(d > 0.0)) rd.fail("experiment.delta_grid", "every delta must be > 0");
    if (c.depths.empty()) rd.fail("experiment.r_grid", "must not be empty");
    for (int r : c.depths)
      if (r < 0 || r + 1 + c.w_depth_offset > kMaxTreeDepth) rd.fail("experiment.r_grid", "depth out of range");
  };
  auto need_conditioning = [&] {
    for (double d : c.deltas)
      if (!(k.b < k.a / (d + 1.0))) {
        rd.fail("experiment.b", "conditioning constraint b < a/(delta+1) violated at delta = " + std::to_string(d));
        break;
      }
  };
  auto need_gamma = [&] {
    for (double d : c.deltas) {
      const double cap = std::min(k.c1 / (1.0 + d), k.c1 / (1.0 + std::sqrt(d)));
      if (!(k.gamma < cap)) {
        rd.fail("experiment.gamma",
                "estimator constraint gamma < min(c1/(1+delta), c1/(1+sqrt(delta))) violated at delta = " +
                    std::to_string(d));
        break;
      }
    }
  };
  if (command == "simulate") {
    if (c.depth < 0 || c.depth > kMaxTreeDepth) rd.fail("experiment.depth", "must lie in [0, 48]");
  } else if (command == "estimate") {
    if (c.n < 0 || c.n + 1 > kMaxTreeDepth) rd.fail("experiment.n", "must lie in [0, 47]");
  } else if (command == "deviation") {
    need_grids();
    if (c.kind == ExperimentKind::Conditional || c.kind == ExperimentKind::Theta) {
      if (!(k.a > 0.0)) rd.fail("experiment.a", "must be > 0");
    }
    if (c.kind == ExperimentKind::Conditional || c.centered) {
      if (!c.law.h3()) rd.fail("model.law", "hypothesis (H3) p10 + p0 + p1 = 1 is required to estimate <mu,f>");
    }
  } else if (command == "bounds") {
    need_grids();
    if (!(m > std::sqrt(2.0)))
      rd.fail("model.law", "hypothesis (H2) m > sqrt(2) violated: m = " + std::to_string(m));
    if (!c.law.h3()) rd.fail("model.law", "hypothesis (H3) p10 + p0 + p1 = 1 violated");
    need_conditioning();
    need_gamma();
  } else if (command == "chain") {
    if (c.x_grid.empty()) rd.fail("chain.x_grid", "must not be empty");
    if (c.k_max < 0) rd.fail("chain.k_max", "must be >= 0");
    if (!c.law.h3()) rd.fail("model.law", "hypothesis (H3) p10 + p0 + p1 = 1 is required");
  }
  return c;
}

/// Full check without side effects; empty means valid.
inline std::vector<ConfigError> validate(const json& cfg, const std::string& command) {
  std::vector<ConfigError> errors;
  decode(cfg, command, errors);
  return errors;
}

// ---------------------------------------------------------------------------
// Outputs

struct RunOutput {
  json report;                                             // deterministic in (config, seed)
  std::vector<std::pair<std::string, std::string>> files;  // extra tables and fixtures
};

namespace detail {

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::string fmt(double x) {
  if (!std::isfinite(x)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline json bound_json(const std::optional<Bound>& b) {
  if (!b) return json{{"applicable", false}};
  return json{{"applicable", true}, {"value", num(b->value())}, {"log_value", num(b->log_value)}};
}

/// Evaluate a bound, turning precondition failures into a recorded reason.
template <class Fn>
json try_bound(Fn&& fn) {
  try {
    return bound_json(fn());
  } catch (const std::exception& e) {
    return json{{"applicable", false}, {"error", e.what()}};
  }
}

inline json regime_json(double m, double alpha) {
  try {
    return regime_name(classify_regime(m, alpha));
  } catch (const std::exception& e) {
    return std::string("unavailable: ") + e.what();
  }
}

inline json estimate_json(const ThetaEstimate& est) {
  json j;
  const auto comps = est.components();
  for (std::size_t i = 0; i < 8; ++i) j["theta_hat"][BarParams::kNames[i]] = comps[i] ? json(*comps[i]) : json(nullptr);
  j["counts"] = {{"both", est.count_both}, {"new_only", est.count_new_only}, {"old_only", est.count_old_only}};
  j["degenerate"] = json::array();
  for (CellClass c : est.degenerate) j["degenerate"].push_back(cell_class_name(c));
  return j;
}

}  // namespace detail

inline RunOutput run_simulate(const ExperimentConfig& c) {
  Rng tree_rng(c.seed, StreamTag::Tree, 0);
  const GwTree tree = sample_tree(c.law, c.depth, tree_rng);
  Rng pop_rng(c.seed, StreamTag::Population, 0);
  const PopulationSample s = simulate_population(tree, c.params, c.noise, c.init, pop_rng);
  RunOutput out;
  json& r = out.report["results"];
  r["nodes"] = tree.size();
  for (int g = 0; g <= tree.max_depth(); ++g) r["generation_sizes"].push_back(tree.generation_size(g));
  r["state_bound"] = detail::num(state_bound(c.params, c.noise, c.init));
  std::ostringstream t, v;
  write_tree(t, tree);
  write_sample(v, s);
  out.files.emplace_back("tree.csv", t.str());
  out.files.emplace_back("sample.csv", v.str());
  return out;
}

inline RunOutput run_estimate(const ExperimentConfig& c) {
  Rng tree_rng(c.seed, StreamTag::Tree, 0);
  const GwTree tree = sample_tree(c.law, c.n + 1, tree_rng);
  Rng pop_rng(c.seed, StreamTag::Population, 0);
  const PopulationSample s = simulate_population(tree, c.params, c.noise, c.init, pop_rng);
  const ThetaEstimate est = lse(s, c.n);
  RunOutput out;
  json& r = out.report["results"];
  r = detail::estimate_json(est);
  r["n"] = c.n;
  r["error_norm"] = est.complete() ? json(estimation_error(est, c.params)) : json(nullptr);
  const RegressionFunctionals rf = regression_functionals(s, c.n, c.params);
  r["regression_functionals"] = {{"g1", detail::num(rf.g1)}, {"g2", detail::num(rf.g2)}, {"h1", detail::num(rf.h1)},
                                 {"h2", detail::num(rf.h2)}, {"B_n", detail::num(rf.b_n)}};
  std::ostringstream csv;
  write_estimate_csv(csv, est);
  out.files.emplace_back("estimate.csv", csv.str());
  std::ostringstream t, v;
  write_tree(t, tree);
  write_sample(v, s);
  out.files.emplace_back("tree.csv", t.str());
  out.files.emplace_back("sample.csv", v.str());
  return out;
}

inline json bound_for_cell(const ExperimentConfig& c, double delta, int r) {
  const double m = c.law.mean();
  const double alpha = ergodicity_alpha(c.params);
  switch (c.kind) {
    case ExperimentKind::Plain:
      if (c.centered)
        return detail::try_bound([&] { return bound_uncentered(delta, r, c.law, alpha, c.set_kind, c.constants); });
      return detail::try_bound([&] { return bound_centered(delta, r, m, alpha, c.set_kind, c.constants); });
    case ExperimentKind::Conditional:
      return detail::try_bound([&] { return bound_conditional(delta, r, c.law, alpha, c.set_kind, c.constants); });
    case ExperimentKind::Theta:
      return detail::try_bound([&] { return bound_theta(delta, r, m, alpha, c.constants); });
    case ExperimentKind::GwLln:
      return detail::try_bound(
          [&] { return std::optional<Bound>(a_r_term(delta, r, c.law, SetKind::Generation, c.constants)); });
  }
  return nullptr;
}

inline RunOutput run_deviation_command(const ExperimentConfig& c, unsigned jobs) {
  const DeviationSpec spec = c.deviation_spec();
  const DeviationResult res = run_deviation(spec, jobs);
  RunOutput out;
  json& r = out.report["results"];
  r["kind"] = experiment_kind_name(c.kind);
  r["mu_f"] = detail::num(res.mu_f);
  r["mu_f_std_error"] = detail::num(res.mu_f_std_error);
  r["regime"] = detail::regime_json(c.law.mean(), ergodicity_alpha(c.params));
  r["degenerate_replicates"] = res.degenerate_replicates;
  r["records"] = json::array();
  std::ostringstream csv;
  csv << "delta,r,n_total,n_rep,k_exceed,p_hat,ci_low,ci_high,bound\n";
  for (const auto& cell : res.cells) {
    json rec{{"delta", cell.delta}, {"r", cell.r}, {"n_total", cell.n_total}, {"no_mass", cell.no_mass()}};
    rec["bound"] = bound_for_cell(c, cell.delta, cell.r);
    const json& b = rec["bound"];
    const std::string bstr = b.value("applicable", false) && b["value"].is_number()
                                 ? detail::fmt(b["value"].get<double>())
                                 : std::string("NA");
    if (cell.estimate) {
      const auto& e = *cell.estimate;
      rec.update(json{{"n_rep", e.n_rep}, {"k_exceed", e.k_exceed}, {"p_hat", e.p_hat}, {"ci_low", e.ci_low},
                      {"ci_high", e.ci_high}});
      csv << detail::fmt(cell.delta) << ',' << cell.r << ',' << cell.n_total << ',' << e.n_rep << ','
          << e.k_exceed << ',' << detail::fmt(e.p_hat) << ',' << detail::fmt(e.ci_low) << ','
          << detail::fmt(e.ci_high) << ',' << bstr << '\n';
    } else {
      csv << detail::fmt(cell.delta) << ',' << cell.r << ',' << cell.n_total << ",0,0,NA,NA,NA," << bstr << '\n';
    }
    r["records"].push_back(rec);
  }
  r["decay_fits"] = json::array();
  for (double delta : c.deltas) {
    json fit{{"delta", delta}};
    try {
      const DecayFit df = decay_fit(estimates_for_delta(res, delta), DecayAxis::VsR);
      fit.update(json{{"slope_vs_r", df.slope}, {"intercept", df.intercept}, {"residual", df.residual},
                      {"points_used", df.points_used}});
      fit["excluded"] = json::array();
      for (const auto& ex : df.excluded) fit["excluded"].push_back({{"r", ex.r}, {"ci_high", ex.ci_high}});
    } catch (const std::exception& e) {
      fit["error"] = e.what();
    }
    r["decay_fits"].push_back(fit);
  }
  out.files.emplace_back("deviation.csv", csv.str());
  return out;
}

inline RunOutput run_chain(const ExperimentConfig& c) {
  RunOutput out;
  json& r = out.report["results"];
  const ChainModel chain = ChainModel::from(c.params, c.noise, c.law);
  const StationaryMoments sm = stationary_moments(c.params, c.noise, c.law);
  const MomentBars mb = MomentBars::from(chain.coefficients, c.noise);
  r["ergodicity_alpha"] = ergodicity_alpha(c.params);
  r["stationary_moments"] = {{"mu1", sm.mu1}, {"mu2", sm.mu2}};
  r["moment_bars"] = {{"alpha", mb.alpha}, {"alpha2", mb.alpha2}, {"beta", mb.beta}, {"beta2", mb.beta2},
                      {"alpha_beta", mb.alpha_beta}, {"sigma2", mb.sigma2}, {"noise2", mb.noise2}};
  r["atom_weights"] = json::array();
  for (const auto& at : chain.coefficients.atoms) r["atom_weights"].push_back(at.weight);

  Rng lr_rng(c.seed, StreamTag::Chain, std::numeric_limits<std::uint64_t>::max());
  const NodeFn f = c.chain_f;
  const auto lr = long_run_averages(chain, c.init.lo, c.chain_long_run, lr_rng, [](double y) { return y; },
                                    [](double y) { return y * y; }, [f](double y) { return f(y); });
  r["long_run"] = {{"mean", lr[0].mean}, {"mean_se", lr[0].std_error}, {"second_moment", lr[1].mean},
                   {"second_moment_se", lr[1].std_error}, {"mu_f", lr[2].mean}, {"mu_f_se", lr[2].std_error}};
  const DecayCurve curve = empirical_qk_gap(chain, f, c.x_grid, c.k_max, static_cast<long>(c.chain_n_rep), c.seed, lr[2]);
  try {
    const RateFit fit = fit_geometric_rate(curve);
    r["rate_fit"] = {{"rate", fit.rate}, {"slope", fit.slope}, {"points_used", fit.points_used}};
  } catch (const std::exception& e) {
    r["rate_fit"] = {{"error", e.what()}};
  }
  std::ostringstream csv;
  write_decay_csv(csv, curve);
  out.files.emplace_back("decay.csv", csv.str());
  return out;
}

inline RunOutput run_bounds(const ExperimentConfig& c) {
  RunOutput out;
  json& r = out.report["results"];
  const double m = c.law.mean();
  const double alpha = ergodicity_alpha(c.params);
  r["m"] = m;
  r["alpha"] = alpha;
  r["regime"] = detail::regime_json(m, alpha);
  r["records"] = json::array();
  std::ostringstream csv;
  csv << "delta,r,h_r,r0,centered,uncentered,a_r,conditional,theta\n";
  auto val = [](const json& b) {
    return b.value("applicable", false) && b["value"].is_number() ? detail::fmt(b["value"].get<double>())
                                                                  : std::string("NA");
  };
  for (double delta : c.deltas) {
    for (int rr : c.depths) {
      json rec{{"delta", delta}, {"r", rr}};
      rec["h_r"] = h_r(m, rr, c.set_kind);
      rec["r0"] = alpha > 0.0 ? detail::num(r0_threshold(delta, alpha, c.constants)) : json(nullptr);
      rec["centered"] = detail::try_bound([&] { return bound_centered(delta, rr, m, alpha, c.set_kind, c.constants); });
      rec["uncentered"] =
          detail::try_bound([&] { return bound_uncentered(delta, rr, c.law, alpha, c.set_kind, c.constants); });
      rec["a_r"] = detail::try_bound(
          [&] { return std::optional<Bound>(a_r_term(delta, rr, c.law, c.set_kind, c.constants)); });
      rec["conditional"] =
          detail::try_bound([&] { return bound_conditional(delta, rr, c.law, alpha, c.set_kind, c.constants); });
      rec["theta"] = detail::try_bound([&] { return bound_theta(delta, rr, m, alpha, c.constants); });
      csv << detail::fmt(delta) << ',' << rr << ',' << detail::fmt(rec["h_r"].get<double>()) << ','
          << (rec["r0"].is_number() ? detail::fmt(rec["r0"].get<double>()) : "NA") << ',' << val(rec["centered"])
          << ',' << val(rec["uncentered"]) << ',' << val(rec["a_r"]) << ',' << val(rec["conditional"]) << ','
          << val(rec["theta"]) << '\n';
      r["records"].push_back(rec);
    }
  }
  out.files.emplace_back("bounds.csv", csv.str());
  return out;
}

/// Decode, validate and execute. The returned report echoes the config and
/// holds no timing or worker-count information, so it is byte-identical
/// across reruns with the same config and seed.
inline RunOutput run(const json& cfg, const std::string& command, unsigned jobs = 1);

inline RunOutput run_report(const json& cfg, unsigned jobs) {
  // The config of `report` is a previous report.json.
  if (!cfg.contains("config") || !cfg.contains("command"))
    throw ConfigInvalid(std::vector<ConfigError>{{"config", "report expects a previous report.json (with 'command' and 'config')"}});
  const std::string cmd = cfg["command"].get<std::string>();
  if (cmd == "report") throw ConfigInvalid(std::vector<ConfigError>{{"command", "cannot reproduce a report of a report"}});
  RunOutput again = run(cfg["config"], cmd, jobs);
  RunOutput out;
  json& r = out.report["results"];
  r["reproduced_command"] = cmd;
  r["identical"] = again.report.dump(2) == cfg.dump(2);
  r["original_results"] = cfg.value("results", json());
  r["rerun_results"] = again.report["results"];
  return out;
}

inline RunOutput run(const json& cfg, const std::string& command, unsigned jobs) {
  if (command == "report") {
    RunOutput out = run_report(cfg, jobs);
    out.report["command"] = "report";
    out.report["version"] = kVersion;
    out.report["config"] = cfg.value("config", json());
    return out;
  }
  std::vector<ConfigError> errors;
  const ExperimentConfig c = decode(cfg, command, errors);
  if (!errors.empty()) throw ConfigInvalid(errors);
  RunOutput out;
  if (command == "simulate") out = run_simulate(c);
  else if (command == "estimate") out = run_estimate(c);
  else if (command == "deviation") out = run_deviation_command(c, jobs);
  else if (command == "chain") out = run_chain(c);
  else if (command == "bounds") out = run_bounds(c);
  json echo = cfg;
  echo["seed"] = c.seed;
  echo.erase("command");
  echo.erase("output");
  out.report["command"] = command;
  out.report["version"] = kVersion;
  out.report["seed"] = c.seed;
  out.report["config"] = echo;
  if (command == "deviation" || command == "simulate" || command == "estimate")
    out.report["initial_law"] = c.init.kind == InitialLaw::Kind::Point
                                    ? json{{"kind", "point"}, {"x", c.init.lo}}
                                    : json{{"kind", "uniform"}, {"lo", c.init.lo}, {"hi", c.init.hi}};
  return out;
}

/// Write `content` to dir/name through a temporary file and a rename.
inline void write_atomically(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  const auto target = dir / name;
  const auto tmp = dir / (name + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

/// Render every output in memory first, then commit file by file.
inline void write_outputs(const std::filesystem::path& dir, const RunOutput& out, unsigned jobs, double seconds) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> all = out.files;
  all.emplace_back("report.json", out.report.dump(2) + "\n");
  json manifest{{"version", kVersion},
                {"command", out.report.value("command", "")},
                {"seed", out.report.value("seed", json())},
                {"jobs", jobs},
                {"wall_clock_seconds", seconds},
                {"config", out.report.value("config", json())}};
  for (const auto& [name, _] : all) manifest["files"].push_back(name);
  all.emplace_back("manifest.json", manifest.dump(2) + "\n");
  for (const auto& [name, content] : all) write_atomically(dir, name, content);
}

}  // namespace barlab
