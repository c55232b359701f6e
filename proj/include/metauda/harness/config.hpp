// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" experiment configuration. Lines starting with '#' are
// comments. Every key has a fixed type; unknown keys are errors.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "metauda/bench/synth.hpp"
#include "metauda/harness/map.hpp"
#include "metauda/train/trainer.hpp"

namespace metauda::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  train::TrainerConfig trainer;
  bench::SceneSpec scene;
  bench::SplitCounts counts;
  std::uint64_t data_seed = 0;
  /// Import instead of generating when non-empty.
  std::string data_dir;
  train::RunMode mode = train::RunMode::kMetaDa;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "runs/default";
  ApVariant ap_variant = ApVariant::kAllPoint;
  double iou_threshold = 0.5;

  /// Throws ConfigError.
  void validate() const;
};

/// Defaults, then the file's assignments in order.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, one per line, in schema order.
std::string dump_config(const ExperimentConfig& config);
/// Hex FNV-1a of the dump without out_dir.
std::string config_hash(const ExperimentConfig& config);

/// Sets one key from its text form. Throws ConfigError.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace metauda::harness
