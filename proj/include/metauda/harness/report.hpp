// SPDX-License-Identifier: Apache-2.0
//
// Per-run evaluation report (schemas/report.schema.json) and the CSV loss
// log written next to it.

#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "metauda/harness/map.hpp"
#include "metauda/train/trainer.hpp"

namespace metauda::harness {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean losses over one epoch of one phase.
struct EpochLoss {
  std::string phase;
  std::uint64_t epoch = 0;
  std::uint64_t steps = 0;
  double det = 0.0;
  double img = 0.0;
  double inst = 0.0;
  double da = 0.0;
  double uda = 0.0;
  std::optional<double> meta_loss;

  bool operator==(const EpochLoss&) const = default;
};

struct EvalReport {
  static constexpr int kVersion = 1;

  std::string config_hash;
  std::string mode;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  MapResult source_test;
  MapResult target_test;
  /// Meta-adaptation only: Θ before the fine-tune phase.
  std::optional<MapResult> target_test_before_finetune;
  std::vector<EpochLoss> loss_curve;
  std::uint64_t updates = 0;
  std::uint64_t source_reads = 0;
  std::uint64_t target_reads = 0;
  /// Sealed target-label reads before evaluation started.
  std::uint64_t sealed_label_reads_in_training = 0;
  int peak_records = 0;
  /// Excluded from equality.
  double wall_time_s = 0.0;

  bool operator==(const EvalReport& other) const;
};

nlohmann::json to_json(const MapResult& r);
MapResult map_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& r);
/// Throws ReportError on schema violations.
EvalReport report_from_json(const nlohmann::json& j);

/// Epoch means of the log; epoch sizes are in updates per phase.
std::vector<EpochLoss> epoch_means(const std::vector<train::LossRow>& log, std::size_t meta_epoch_size,
                                   std::size_t main_epoch_size);

/// Header: phase,step,L_det,L_img,L_inst,L_da,L_uda,meta_loss.
std::string loss_csv(const std::vector<train::LossRow>& log);

}  // namespace metauda::harness
