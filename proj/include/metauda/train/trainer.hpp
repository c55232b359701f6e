// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the four ladder modes. Meta-adaptation runs a phase of
// online meta rounds that learns an initial condition, then the same
// single-level adaptation loop the joint baseline uses.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metauda/bench/synth.hpp"
#include "metauda/da/alignment.hpp"
#include "metauda/train/meta.hpp"
#include "metauda/train/stream.hpp"

namespace metauda::train {

enum class RunMode { kSourceOnly, kDa, kMetaDa, kOracle };
std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct TrainerConfig {
  det::DetectorConfig detector;
  da::AlignmentConfig alignment;
  double lambda = 0.1;
  /// Off only for oracles that need a true gradient field.
  bool reverse_gradient = true;

  // Single-level loop (baselines and the fine-tune phase).
  std::size_t epochs = 24;
  double lr = 0.01;
  double momentum = 0.9;

  // Meta phase.
  double alpha = 0.001;
  double beta = 0.001;
  std::size_t m = 3;
  MetaMode meta_mode = MetaMode::kExact;
  InnerStyle inner_style = InnerStyle::kRestart;
  std::size_t meta_epochs = 8;

  /// Learning rates are multiplied by lr_decay from the middle epoch on.
  double lr_decay = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  MetaSettings meta_settings() const { return {alpha, m, meta_mode, inner_style}; }
};

enum class Phase { kMeta, kMain, kDone };
std::string to_string(Phase phase);

struct LossRow {
  Phase phase = Phase::kMain;
  std::uint64_t step = 0;  // phase-local update index
  double det = 0.0;
  double img = 0.0;
  double inst = 0.0;
  double da = 0.0;
  double uda = 0.0;
  std::optional<double> meta_loss;

  bool operator==(const LossRow&) const = default;
};

struct TrainerState {
  RunMode mode = RunMode::kDa;
  Phase phase = Phase::kMain;
  ParameterSet params;
  /// Momentum buffer per parameter; reset when a phase starts.
  ParameterSet velocity;
  std::uint64_t epoch = 0;          // within the phase
  std::uint64_t step_in_epoch = 0;  // within the epoch
  std::uint64_t updates = 0;        // all phases
  std::map<std::string, StreamState> streams;
  /// Θ at the end of the meta phase, before fine-tuning.
  std::optional<ParameterSet> meta_params;
  std::vector<LossRow> log;

  bool done() const { return phase == Phase::kDone; }
  /// Sum of reads over streams of one domain.
  std::uint64_t reads(det::Domain domain) const;
};

/// Bitwise comparison of everything in the state.
bool same_state(const TrainerState& a, const TrainerState& b);

class Trainer {
 public:
  /// The quartet's storage must outlive the trainer. Oracle runs need a
  /// labeled target_train and never touch the source halves.
  Trainer(TrainerConfig config, RunMode mode, bench::SplitQuartet data);

  const TrainerConfig& config() const { return config_; }
  const det::Detector& detector() const { return detector_; }
  const da::AlignmentHeads& heads() const { return heads_; }

  TrainerState initial_state() const;
  /// Runs up to max_updates parameter updates (all when absent). Returns
  /// true once training is complete.
  bool run(TrainerState& state, std::optional<std::uint64_t> max_updates = {}) const;

  /// One online meta round: m inner steps, m validation losses, one outer
  /// update of Θ with momentum.
  void meta_round(TrainerState& state) const;
  /// One single-level update for the state's mode.
  void single_step(TrainerState& state) const;

  std::size_t steps_per_epoch() const;
  std::size_t rounds_per_epoch() const;

  /// The per-pair adaptation loss used by every mode that aligns.
  da::UdaLossBreakdown uda(const ParameterSet& params, const det::DetectionSample& source,
                           const det::DetectionSample& target, std::uint64_t dropout_seed) const;

 private:
  struct Streams;
  void meta_round(TrainerState& state, Streams& streams) const;
  void single_step(TrainerState& state, Streams& streams) const;
  Streams open_streams(const TrainerState& state) const;
  void save_streams(TrainerState& state, const Streams& streams) const;
  double decayed(double rate, std::uint64_t epoch, std::uint64_t epochs) const;
  void apply_update(TrainerState& state, const Gradients& g, double rate) const;
  void start_phase(TrainerState& state, Phase phase) const;

  TrainerConfig config_;
  RunMode mode_;
  bench::SplitQuartet data_;
  det::Detector detector_;
  da::AlignmentHeads heads_;
};

TrainerState train_meta_uda(const TrainerConfig& config, const bench::SplitQuartet& quartet);
TrainerState baseline_source_only(const TrainerConfig& config, const bench::SplitQuartet& quartet);
TrainerState baseline_da_joint(const TrainerConfig& config, const bench::SplitQuartet& quartet);
/// labeled_target must carry target_train labels; throws ContractViolation
/// otherwise.
TrainerState baseline_oracle(const TrainerConfig& config, const bench::SplitQuartet& labeled_target);

/// Live-record peak of a conventional meta step that unrolls `steps` chained
/// inner updates before one validation loss. Measurement only.
int full_unroll_record_count(const TrainerConfig& config, const bench::SplitQuartet& quartet,
                             std::size_t steps);

// Checkpoint container: "MUDACKPT", u32 version, then the state with all
// integers as u64 and all reals as IEEE-754 binary64, little-endian.
constexpr std::uint32_t kCheckpointVersion = 1;
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
void save_checkpoint(const TrainerState& state, const std::filesystem::path& path);
TrainerState load_checkpoint(const std::filesystem::path& path);

}  // namespace metauda::train
