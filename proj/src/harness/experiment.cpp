// SPDX-License-Identifier: Apache-2.0

#include "metauda/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "metauda/bench/dataset_io.hpp"
#include "metauda/util/log.hpp"

namespace metauda::harness {

namespace fs = std::filesystem;
using train::RunMode;

namespace {

constexpr RunMode kLadder[] = {RunMode::kSourceOnly, RunMode::kDa, RunMode::kMetaDa, RunMode::kOracle};

train::TrainerConfig trainer_config(const ExperimentConfig& config, std::uint64_t seed) {
  train::TrainerConfig t = config.trainer;
  t.seed = seed;
  return t;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ad::ContractViolation*>(&e) ||
      dynamic_cast<const bench::GenerationError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const ad::NumericFault*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const bench::DatasetError*>(&e) ||
      dynamic_cast<const train::CheckpointError*>(&e) || dynamic_cast<const ReportError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kExitIo;
  }
  return kExitFailure;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    log::error(e.what());
    return code;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

bench::Benchmark load_benchmark(const ExperimentConfig& config) {
  if (!config.data_dir.empty()) {
    auto b = bench::import_dataset(config.data_dir);
    if (b.spec.image_size != config.trainer.detector.image_size) {
      throw ConfigError("data_dir: image size does not match the detector");
    }
    return b;
  }
  return bench::generate_benchmark(config.scene, config.counts, config.data_seed);
}

MapResult evaluate_split(const train::Trainer& trainer, const train::ParameterSet& params,
                         const std::vector<det::DetectionSample>& labeled, const ExperimentConfig& config) {
  DetectionsByImage dets;
  GroundTruthByImage gts;
  for (const auto& s : labeled) {
    if (!s.labeled()) throw ad::ContractViolation("evaluate_split: sample " + std::to_string(s.id) + " unlabeled");
    dets[s.id] = trainer.detector().detect(params, s.image);
    gts[s.id] = *s.labels;
  }
  return evaluate_map(dets, gts, config.trainer.detector.num_classes, config.iou_threshold, config.ap_variant);
}

namespace {

EvalReport evaluate_state(const ExperimentConfig& config, const bench::Benchmark& benchmark,
                          const train::Trainer& trainer, const train::TrainerState& state, std::uint64_t seed,
                          const bench::SealedLabels& labels) {
  EvalReport r;
  r.config_hash = config_hash(config);
  r.mode = train::to_string(state.mode);
  r.seed = seed;
  r.data_seed = benchmark.seed;
  r.updates = state.updates;
  r.source_reads = state.reads(det::Domain::kSource);
  r.target_reads = state.reads(det::Domain::kTarget);
  r.sealed_label_reads_in_training = labels.access_count();
  r.loss_curve = epoch_means(state.log, trainer.rounds_per_epoch(), trainer.steps_per_epoch());

  const auto target_test = labels.unseal(benchmark.split(bench::Split::kTargetTest));
  r.source_test = evaluate_split(trainer, state.params, benchmark.split(bench::Split::kSourceTest), config);
  r.target_test = evaluate_split(trainer, state.params, target_test, config);
  if (state.meta_params) {
    r.target_test_before_finetune = evaluate_split(trainer, *state.meta_params, target_test, config);
  }
  return r;
}

struct ModeData {
  bench::SealedLabels labels;
  std::vector<det::DetectionSample> oracle_train;
  bench::SplitQuartet quartet;
};

/// Oracle runs see labeled target_train only; adaptation runs see the
/// unlabeled quartet.
void prepare(ModeData& d, const bench::Benchmark& b, RunMode mode) {
  d.labels = b.target_labels;
  if (mode == RunMode::kOracle) {
    d.oracle_train = d.labels.unseal(b.split(bench::Split::kTargetTrain));
    d.quartet = {};
    d.quartet.target_train = d.oracle_train;
  } else {
    d.quartet = bench::uda_quartet(b);
  }
}

}  // namespace

RunResult run_cell(const ExperimentConfig& config, const bench::Benchmark& benchmark, RunMode mode,
                   std::uint64_t seed, const std::optional<fs::path>& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  ModeData data;
  prepare(data, benchmark, mode);
  const train::Trainer trainer(trainer_config(config, seed), mode, data.quartet);
  auto state = trainer.initial_state();
  ad::reset_peak_record_count();
  trainer.run(state);
  const int peak = ad::peak_record_count();

  RunResult result{evaluate_state(config, benchmark, trainer, state, seed, data.labels), std::move(state)};
  result.report.peak_records = peak;
  result.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (out_dir) {
    ensure_dir(*out_dir);
    write_text(*out_dir / "report.json", to_json(result.report).dump(1) + "\n");
    write_text(*out_dir / "losses.csv", loss_csv(result.state.log));
    try {
      train::save_checkpoint(result.state, *out_dir / "checkpoint.bin");
    } catch (const train::CheckpointError& e) {
      throw IoError(e.what());
    }
  }
  return result;
}

EvalReport evaluate_checkpoint(const ExperimentConfig& config, const bench::Benchmark& benchmark,
                               const train::TrainerState& state, std::uint64_t seed) {
  ModeData data;
  prepare(data, benchmark, state.mode);
  const train::Trainer trainer(trainer_config(config, seed), state.mode, data.quartet);
  const auto expected = trainer.initial_state();
  if (expected.params.size() != state.params.size()) {
    throw ConfigError("checkpoint does not match the configured model");
  }
  for (const auto& [path, t] : expected.params) {
    if (!state.params.contains(path) || state.params.at(path).shape() != t.shape()) {
      throw ConfigError("checkpoint does not match the configured model at " + path);
    }
  }
  return evaluate_state(config, benchmark, trainer, state, seed, data.labels);
}

std::size_t ablation_threads(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("METAUDA_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) throw ConfigError("METAUDA_THREADS must be a positive integer");
    n = v;
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

AblationReport run_ablation(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  if (config.seeds.size() < 3) throw ConfigError("ablation needs at least three seeds");
  const bench::Benchmark benchmark = load_benchmark(config);
  ensure_dir(out_dir);

  AblationReport report;
  report.config_hash = config_hash(config);
  report.seeds = config.seeds;
  for (RunMode mode : kLadder) {
    for (auto seed : config.seeds) report.cells.push_back({mode, seed, std::nullopt, {}});
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < report.cells.size(); i = next++) {
      auto& cell = report.cells[i];
      const fs::path dir = out_dir / train::to_string(cell.mode) / ("seed_" + std::to_string(cell.seed));
      try {
        cell.report = run_cell(config, benchmark, cell.mode, cell.seed, dir).report;
        log::info("ablation: " + train::to_string(cell.mode) + " seed " + std::to_string(cell.seed) +
                  " target mAP " + std::to_string(cell.report->target_test.map));
      } catch (const std::exception& e) {
        cell.error = e.what();
        log::error("ablation: " + train::to_string(cell.mode) + " seed " + std::to_string(cell.seed) +
                   " failed: " + e.what());
      }
    }
  };
  const std::size_t threads = ablation_threads(report.cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  report.complete = true;
  report.leakage_free = true;
  for (RunMode mode : kLadder) {
    ModeSummary s;
    s.mode = train::to_string(mode);
    std::vector<double> target, source;
    for (const auto& c : report.cells) {
      if (c.mode != mode) continue;
      if (!c.report) {
        ++s.failed;
        continue;
      }
      target.push_back(c.report->target_test.map);
      source.push_back(c.report->source_test.map);
      s.max_sealed_reads_in_training = std::max(s.max_sealed_reads_in_training, c.report->sealed_label_reads_in_training);
      s.max_target_reads = std::max(s.max_target_reads, c.report->target_reads);
    }
    s.runs = target.size();
    if (s.failed > 0) report.complete = false;
    if (!target.empty()) {
      const double n = static_cast<double>(target.size());
      for (std::size_t i = 0; i < target.size(); ++i) {
        s.target_mean += target[i] / n;
        s.source_mean += source[i] / n;
      }
      double sq = 0.0;
      for (double v : target) sq += (v - s.target_mean) * (v - s.target_mean);
      s.target_std = target.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
      s.target_min = *std::min_element(target.begin(), target.end());
      s.target_max = *std::max_element(target.begin(), target.end());
    }
    if (mode != RunMode::kOracle && s.max_sealed_reads_in_training != 0) report.leakage_free = false;
    if (mode == RunMode::kSourceOnly && s.max_target_reads != 0) report.leakage_free = false;
    report.summaries.push_back(s);
  }

  const auto& so = report.summaries[0];
  const auto& da = report.summaries[1];
  const auto& meta = report.summaries[2];
  const auto& oracle = report.summaries[3];
  report.meta_margin = meta.target_mean - da.target_mean;
  report.ordering_satisfied = report.complete && so.target_mean <= da.target_mean &&
                              da.target_mean <= meta.target_mean && meta.target_mean <= oracle.target_mean;
  report.strict_ordering = report.complete && so.target_mean < da.target_mean &&
                           report.meta_margin >= kMinMetaMargin && meta.target_mean < oracle.target_mean;

  write_text(out_dir / "ablation.json", to_json(report).dump(1) + "\n");
  write_text(out_dir / "ablation.md", ablation_markdown(report));
  return report;
}

nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& s : r.summaries) {
    summaries.push_back({{"mode", s.mode},
                         {"runs", s.runs},
                         {"failed", s.failed},
                         {"target_map_mean", s.target_mean},
                         {"target_map_std", s.target_std},
                         {"target_map_min", s.target_min},
                         {"target_map_max", s.target_max},
                         {"source_map_mean", s.source_mean},
                         {"max_sealed_label_reads_in_training", s.max_sealed_reads_in_training},
                         {"max_target_reads", s.max_target_reads}});
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json j = {{"mode", train::to_string(c.mode)}, {"seed", c.seed}};
    if (c.report) {
      j["target_map"] = c.report->target_test.map;
      j["source_map"] = c.report->source_test.map;
    } else {
      j["error"] = c.error;
    }
    cells.push_back(j);
  }
  return {{"schema", "metauda-ablation"},
          {"version", 1},
          {"config_hash", r.config_hash},
          {"seeds", r.seeds},
          {"complete", r.complete},
          {"ordering_satisfied", r.ordering_satisfied},
          {"strict_ordering", r.strict_ordering},
          {"meta_margin", r.meta_margin},
          {"leakage_free", r.leakage_free},
          {"summaries", summaries},
          {"cells", cells}};
}

std::string ablation_markdown(const AblationReport& r) {
  std::string out = "| mode | runs | target mAP | spread (min..max) | source mAP | sealed reads |\n";
  out += "|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& s : r.summaries) {
    std::snprintf(buf, sizeof buf, "| %s | %zu/%zu | %.1f ± %.1f | %.1f..%.1f | %.1f | %llu |\n", s.mode.c_str(),
                  s.runs, s.runs + s.failed, 100 * s.target_mean, 100 * s.target_std, 100 * s.target_min,
                  100 * s.target_max, 100 * s.source_mean,
                  static_cast<unsigned long long>(s.max_sealed_reads_in_training));
    out += buf;
  }
  out += "\n";
  out += r.complete ? "" : "LADDER-INCOMPLETE\n";
  out += r.ordering_satisfied ? "ORDERING-SATISFIED\n" : "ORDERING-VIOLATED\n";
  std::snprintf(buf, sizeof buf, "meta-da minus da: %+.1f mAP\n", 100 * r.meta_margin);
  out += buf;
  out += r.leakage_free ? "leakage: none\n" : "leakage: DETECTED\n";
  return out;
}

}  // namespace metauda::harness
