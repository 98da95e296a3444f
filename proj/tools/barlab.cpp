// barlab <command> --config FILE [--set k=v]... [--jobs N] [--seed S] [--out DIR]

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "barlab/harness.hpp"

namespace {

int emit_error(const std::string& kind, const std::string& message, const barlab::json& details = nullptr) {
  barlab::json rec{{"error", {{"kind", kind}, {"message", message}}}};
  if (!details.is_null()) rec["error"]["errors"] = details;
  std::cerr << rec.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"barlab: bifurcating autoregression on Galton-Watson trees"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool validate_only = false;

  for (const auto& name : barlab::commands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " command");
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--set", overrides, "override path=value (repeatable)");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_flag("--validate-only", validate_only, "check the config and exit");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return emit_error("usage", e.what());
  }
  const std::string command = app.get_subcommands().front()->get_name();

  barlab::json cfg;
  try {
    std::ifstream is(config_path);
    if (!is) return emit_error("io", "cannot read config " + config_path);
    cfg = barlab::json::parse(is);
    for (const auto& o : overrides) barlab::config::apply_override(cfg, o);
    if (seed) {
      if (command == "report") cfg["config"]["seed"] = *seed;
      else cfg["seed"] = *seed;
    }
    if (cfg.contains("output") && cfg["output"].is_string() && out_dir == "out") out_dir = cfg["output"];
  } catch (const std::exception& e) {
    return emit_error("config", e.what());
  }

  if (validate_only) {
    const auto errors = barlab::validate(cfg, command);
    barlab::json list = barlab::json::array();
    for (const auto& e : errors) list.push_back({{"field", e.field}, {"reason", e.reason}});
    if (!errors.empty()) return emit_error("validation", "invalid configuration", list);
    std::cout << "ok\n";
    return 0;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    const barlab::RunOutput out = barlab::run(cfg, command, jobs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    barlab::write_outputs(out_dir, out, jobs, secs);
    std::cout << (std::filesystem::path(out_dir) / "report.json").string() << '\n';
  } catch (const barlab::ConfigInvalid& e) {
    barlab::json list = barlab::json::array();
    for (const auto& err : e.errors()) list.push_back({{"field", err.field}, {"reason", err.reason}});
    return emit_error("validation", "invalid configuration", list);
  } catch (const barlab::HypothesisViolation& e) {
    return emit_error("hypothesis", e.what());
  } catch (const barlab::InvalidArgument& e) {
    return emit_error("invalid_argument", e.what());
  } catch (const std::exception& e) {
    return emit_error("runtime", e.what());
  }
  return 0;
}
