// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs: data, training, evaluation and artifacts. Everything a run
// writes goes under its output directory.

#pragma once

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metauda/bench/synth.hpp"
#include "metauda/harness/config.hpp"
#include "metauda/harness/report.hpp"

namespace metauda::harness {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

/// Maps an exception from the run API to its exit code.
int exit_code_for(const std::exception& e);
/// Runs fn, logging and translating any exception to an exit code.
int guarded(const std::function<int()>& fn);

/// Imports data_dir when set, otherwise generates from data_seed.
bench::Benchmark load_benchmark(const ExperimentConfig& config);

/// Evaluates params on both test splits. Target labels are unsealed from a
/// copy of the benchmark's seal, so the benchmark's counter is untouched.
MapResult evaluate_split(const train::Trainer& trainer, const train::ParameterSet& params,
                         const std::vector<det::DetectionSample>& labeled, const ExperimentConfig& config);

struct RunResult {
  EvalReport report;
  train::TrainerState state;
};

/// Trains one mode with one seed on the benchmark. When out_dir is set,
/// writes report.json, losses.csv and checkpoint.bin there.
RunResult run_cell(const ExperimentConfig& config, const bench::Benchmark& benchmark, train::RunMode mode,
                   std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir);

/// Re-evaluates a saved state.
EvalReport evaluate_checkpoint(const ExperimentConfig& config, const bench::Benchmark& benchmark,
                               const train::TrainerState& state, std::uint64_t seed);

struct ModeSummary {
  std::string mode;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double target_mean = 0.0;
  double target_std = 0.0;
  double target_min = 0.0;
  double target_max = 0.0;
  double source_mean = 0.0;
  /// Largest sealed-label read count before evaluation over the mode's runs.
  std::uint64_t max_sealed_reads_in_training = 0;
  std::uint64_t max_target_reads = 0;
};

struct AblationCell {
  train::RunMode mode = train::RunMode::kSourceOnly;
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  std::string error;
};

struct AblationReport {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;
  /// source-only, da, meta-da, oracle.
  std::vector<ModeSummary> summaries;
  bool complete = false;
  /// Mean target mAP non-decreasing along the ladder.
  bool ordering_satisfied = false;
  /// Strictly increasing with meta-da at least min_meta_margin above da.
  bool strict_ordering = false;
  double meta_margin = 0.0;
  /// Adaptation runs read no sealed label before evaluation.
  bool leakage_free = false;
};

inline constexpr double kMinMetaMargin = 0.02;

/// Thread count for ablations: METAUDA_THREADS when set, else the hardware
/// concurrency, never more than jobs.
std::size_t ablation_threads(std::size_t jobs);

/// Every mode × seed on one shared benchmark. Needs at least three seeds.
/// Cells land in out_dir/<mode>/seed_<n>/, the summary in out_dir/ablation.json
/// and out_dir/ablation.md.
AblationReport run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir);

nlohmann::json to_json(const AblationReport& r);
std::string ablation_markdown(const AblationReport& r);

/// Writes text atomically (temp file then rename). Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace metauda::harness
