// SPDX-License-Identifier: Apache-2.0
//
// metauda <verb> [options]. Exit codes: 0 ok, 1 failed check, 2 bad config,
// 3 numeric fault, 4 I/O.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "metauda/bench/dataset_io.hpp"
#include "metauda/harness/experiment.hpp"
#include "metauda/harness/gradcheck.hpp"

using namespace metauda;
using namespace metauda::harness;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string ap_variant;
  std::vector<std::string> sets;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seeds = {*o.seed};
  if (!o.mode.empty()) set_config_value(c, "mode", o.mode);
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.ap_variant.empty()) set_config_value(c, "ap_variant", o.ap_variant);
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Options& o, bool with_mode) {
  cmd->add_option("--config", o.config, "key = value configuration file");
  cmd->add_option("--seed", o.seed, "training seed (replaces the seed list)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--ap-variant", o.ap_variant, "allpoint or 11pt");
  cmd->add_option("--set", o.sets, "override one key, key=value");
  if (with_mode) cmd->add_option("--mode", o.mode, "source-only, da, meta-da or oracle");
}

void print_map(const char* label, const MapResult& r) { std::printf("%-28s mAP %.2f\n", label, 100.0 * r.map); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned unsupervised domain adaptation for detection"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "generate the benchmark into --out");
  add_common(gen, o, false);
  auto* train = app.add_subcommand("train", "train one mode and evaluate it");
  add_common(train, o, true);
  auto* eval = app.add_subcommand("eval", "re-evaluate <out>/checkpoint.bin into <out>/eval.json");
  add_common(eval, o, false);
  auto* ablation = app.add_subcommand("ablation", "every mode over every seed");
  add_common(ablation, o, false);
  auto* grad = app.add_subcommand("grad-check", "reverse mode against finite differences");
  add_common(grad, o, false);
  auto* print = app.add_subcommand("print-config", "print the resolved configuration");
  add_common(print, o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  return guarded([&]() -> int {
    if (print->parsed()) {
      const auto c = resolve(o);
      std::cout << dump_config(c) << "# hash " << config_hash(c) << "\n";
      return kExitOk;
    }
    if (grad->parsed()) {
      const auto checks = run_grad_checks(o.seed.value_or(4));
      bool ok = true;
      for (const auto& c : checks) {
        std::printf("%-28s params %4zu  rel err %.3e  tol %.0e  %s\n", c.name.c_str(), c.parameters,
                    c.relative_error, c.tolerance, c.passed() ? "ok" : "FAIL");
        ok &= c.passed();
      }
      return ok ? kExitOk : kExitFailure;
    }
    if (gen->parsed()) {
      auto c = resolve(o);
      if (o.seed) c.data_seed = *o.seed;
      const auto b = bench::generate_benchmark(c.scene, c.counts, c.data_seed);
      bench::export_dataset(b, c.out_dir);
      std::printf("wrote %s\n", c.out_dir.c_str());
      return kExitOk;
    }
    if (train->parsed()) {
      const auto c = resolve(o);
      const auto b = load_benchmark(c);
      const auto r = run_cell(c, b, c.mode, c.seeds.front(), fs::path(c.out_dir)).report;
      print_map("source test", r.source_test);
      print_map("target test", r.target_test);
      if (r.target_test_before_finetune) print_map("target test before fine-tune", *r.target_test_before_finetune);
      std::printf("artifacts in %s\n", c.out_dir.c_str());
      return kExitOk;
    }
    if (eval->parsed()) {
      const auto c = resolve(o);
      const auto state = train::load_checkpoint(fs::path(c.out_dir) / "checkpoint.bin");
      const auto b = load_benchmark(c);
      const auto r = evaluate_checkpoint(c, b, state, c.seeds.front());
      write_text(fs::path(c.out_dir) / "eval.json", to_json(r).dump(1) + "\n");
      print_map("source test", r.source_test);
      print_map("target test", r.target_test);
      return kExitOk;
    }
    const auto c = resolve(o);
    const auto r = run_ablation(c, c.out_dir);
    std::cout << ablation_markdown(r);
    return r.complete ? kExitOk : kExitFailure;
  });
}
