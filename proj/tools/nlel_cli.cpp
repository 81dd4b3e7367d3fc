// Command-line runner for the labelled tree-search engine.
//
// Subcommands:
//   run              execute a configured policy over synthetic instances
//   replay           recompute metrics from recorded traces
//   check-theory     run the analytical property suites, one line per claim
//   ablate           sweep trust radius / ledger rows / bits / annealing
//   validate-schema  check a schema document and print its field table

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlel/http_backend.hpp>
#include <nlel/runner.hpp>
#include <nlel/theory.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

nlel::runner::RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return nlel::runner::config_from_json(json::parse(in));
}

void print_report(const nlel::metrics::MetricsReport& report) {
  std::cout << "instances: " << report.instances << "  seeds: " << report.seeds
            << "  reference budget: " << report.reference_budget << "\n";
  for (const auto& p : report.success_at_compute) {
    std::printf("  success@%.1fx  %.4f  [%.4f, %.4f]\n", p.multiplier, p.accuracy,
                p.ci_low, p.ci_high);
  }
  if (report.tokens_per_success)
    std::printf("  tokens/success  %.1f\n", *report.tokens_per_success);
  else
    std::printf("  tokens/success  n/a (nothing solved)\n");
  if (report.expansions_per_success)
    std::printf("  expansions/success  %.2f\n", *report.expansions_per_success);
  std::printf("  verify accept rate  %.4f\n", report.verify_accept_rate);
  std::printf("  generation tokens  %lld  controller tokens  %lld\n",
              static_cast<long long>(report.total_tokens),
              static_cast<long long>(report.controller_tokens));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"labelled tree-search control engine"};
  app.require_subcommand(1);

  // ---- run ----------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "execute a configured run");
  std::string run_config_path;
  std::string run_output_override;
  run_cmd->add_option("--config", run_config_path, "run configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--output-dir", run_output_override, "override output_dir");

  // ---- replay -------------------------------------------------------
  auto* replay_cmd = app.add_subcommand("replay", "recompute metrics from traces");
  std::string replay_dir;
  replay_cmd->add_option("--dir", replay_dir, "output directory of a finished run")
      ->required()
      ->check(CLI::ExistingDirectory);

  // ---- check-theory -------------------------------------------------
  auto* theory_cmd = app.add_subcommand("check-theory", "run the property suites");
  bool theory_quick = false;
  std::string theory_scratch = "theory_scratch";
  theory_cmd->add_flag("--quick", theory_quick, "reduced sample sizes");
  theory_cmd->add_option("--scratch-dir", theory_scratch,
                         "working directory for run artifacts");

  // ---- ablate -------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep guard settings");
  std::string ablate_config_path;
  ablate_cmd->add_option("--config", ablate_config_path, "base configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  // ---- validate-schema ----------------------------------------------
  auto* schema_cmd = app.add_subcommand("validate-schema", "check a schema document");
  std::string schema_path;
  bool schema_dump = false;
  schema_cmd->add_option("--schema", schema_path,
                         "schema document (omit for the built-in one)");
  schema_cmd->add_flag("--dump", schema_dump, "print the canonical JSON form");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      auto cfg = load_config(run_config_path);
      if (!run_output_override.empty()) cfg.output_dir = run_output_override;
      auto artifacts = nlel::runner::run(cfg);
      std::cout << "wrote " << artifacts.trace_files.size() << " traces to "
                << artifacts.output_dir << "\n";
      print_report(artifacts.report);
      return 0;
    }

    if (*replay_cmd) {
      auto result = nlel::runner::replay(replay_dir);
      print_report(result.report);
      std::cout << (result.matches_stored ? "replay matches the stored report\n"
                                          : "replay DIFFERS from the stored report\n");
      return result.matches_stored ? 0 : 1;
    }

    if (*theory_cmd) {
      auto checks = nlel::theory::run_all(theory_scratch, theory_quick);
      bool all = true;
      for (const auto& c : checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << "  " << c.detail
                  << "\n";
        all = all && c.pass;
      }
      std::error_code ec;
      fs::remove_all(theory_scratch, ec);
      return all ? 0 : 1;
    }

    if (*ablate_cmd) {
      auto cfg = load_config(ablate_config_path);
      auto cells = nlel::runner::ablate(cfg);
      std::printf("%-12s %-8s %-10s %s\n", "axis", "value", "accuracy",
                  "tokens/success");
      for (const auto& c : cells)
        std::printf("%-12s %-8s %-10.4f %.1f\n", c.axis.c_str(), c.value.c_str(),
                    c.accuracy, c.tokens_per_success);
      return 0;
    }

    if (*schema_cmd) {
      nlel::ControlSchema schema;
      if (schema_path.empty()) {
        schema = nlel::canonical_v1();
      } else {
        std::ifstream in(schema_path);
        if (!in) throw std::runtime_error("cannot open schema file: " + schema_path);
        schema = nlel::schema_from_json(json::parse(in));
      }
      nlel::require_control_contract(schema);
      auto defaults_check = nlel::revalidate(schema, nlel::schema_defaults(schema));
      if (!defaults_check.ok())
        throw std::runtime_error("defaults do not validate: " +
                                 defaults_check.describe());
      if (schema_dump) {
        std::cout << nlel::schema_to_json(schema).dump(2) << "\n";
      } else {
        std::cout << nlel::render_schema_text(schema);
        std::cout << "digest: "
                  << nlel::rng::short_digest(nlel::schema_to_json(schema).dump())
                  << "\n";
      }
      std::cout << "schema ok: " << schema.fields.size() << " fields\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
