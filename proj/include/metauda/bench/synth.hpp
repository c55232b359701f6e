// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired-domain detection benchmark. Source scenes are rendered as
// bright shapes on a textured background; target scenes are independent
// draws pushed through an appearance shift (blur, gamma, noise, optional
// inversion).

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metauda/det/sample.hpp"

namespace metauda::bench {

using det::DetectionSample;
using det::GroundTruth;

struct DomainShift {
  bool invert = false;
  double blur_sigma = 1.0;
  double gamma = 0.7;
  double noise = 0.02;

  bool neutral() const { return !invert && blur_sigma == 0.0 && gamma == 1.0 && noise == 0.0; }
  static DomainShift none() { return {false, 0.0, 1.0, 0.0}; }
};

struct SceneSpec {
  std::size_t image_size = 32;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  /// Classes by shape: 0 disk, 1 square, 2 bar.
  std::size_t num_classes = 3;
  double background_level = 0.2;
  double texture_amplitude = 0.06;
  double grain = 0.03;
  /// Center of each class's intensity band; half-width band_width.
  std::array<double, 3> class_intensity{0.9, 0.72, 0.56};
  double band_width = 0.05;
  double max_overlap_iou = 0.2;
  std::size_t placement_retries = 64;
  DomainShift shift;

  void validate() const;
};

struct SplitCounts {
  std::size_t source_train = 120;
  std::size_t target_train = 120;
  std::size_t source_val = 40;
  std::size_t target_val = 40;
  std::size_t source_test = 60;
  std::size_t target_test = 60;
};

enum class Split { kSourceTrain, kTargetTrain, kSourceVal, kTargetVal, kSourceTest, kTargetTest };
inline constexpr std::array<Split, 6> kAllSplits{Split::kSourceTrain, Split::kTargetTrain,
                                                 Split::kSourceVal,   Split::kTargetVal,
                                                 Split::kSourceTest,  Split::kTargetTest};

std::string to_string(Split split);
Split split_from_string(const std::string& name);
det::Domain split_domain(Split split);

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Target labels kept apart from the samples. Every read is counted so runs
/// can prove they never looked. Copies start with a fresh counter.
class SealedLabels {
 public:
  SealedLabels() = default;
  SealedLabels(const SealedLabels& other);
  SealedLabels& operator=(const SealedLabels& other);
  SealedLabels(SealedLabels&&) noexcept = default;
  SealedLabels& operator=(SealedLabels&&) noexcept = default;

  void seal(std::uint64_t id, std::vector<GroundTruth> labels);
  bool contains(std::uint64_t id) const { return labels_.count(id) > 0; }
  std::size_t size() const { return labels_.size(); }

  /// Counted read.
  const std::vector<GroundTruth>& read(std::uint64_t id) const;
  /// Labeled copies of the given samples (one counted read each).
  std::vector<DetectionSample> unseal(std::span<const DetectionSample> samples) const;
  std::uint64_t access_count() const { return reads_->load(); }

  /// Uncounted comparison, for tests and serialization.
  const std::map<std::uint64_t, std::vector<GroundTruth>>& raw() const { return labels_; }
  bool operator==(const SealedLabels& other) const { return labels_ == other.labels_; }

 private:
  std::map<std::uint64_t, std::vector<GroundTruth>> labels_;
  std::unique_ptr<std::atomic<std::uint64_t>> reads_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

struct Benchmark {
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::array<std::vector<DetectionSample>, 6> splits;
  SealedLabels target_labels;

  std::vector<DetectionSample>& split(Split s) { return splits[static_cast<std::size_t>(s)]; }
  const std::vector<DetectionSample>& split(Split s) const {
    return splits[static_cast<std::size_t>(s)];
  }
};

/// The four training streams. Views into storage owned elsewhere.
struct SplitQuartet {
  std::span<const DetectionSample> source_train;
  std::span<const DetectionSample> target_train;
  std::span<const DetectionSample> source_val;
  std::span<const DetectionSample> target_val;
};

/// Quartet for adaptation runs: target streams are unlabeled.
SplitQuartet uda_quartet(const Benchmark& b);

/// Deterministic id for the index-th sample of a split.
std::uint64_t sample_id(Split split, std::size_t index);

/// Renders one scene. Objects come back with tight boxes.
struct Scene {
  det::Image image;
  std::vector<GroundTruth> objects;
};
Scene render_scene(const SceneSpec& spec, std::uint64_t stream_seed);
/// Appearance shift on a [0,1] image; the result is quantized to k/255.
det::Image apply_shift(const det::Image& image, const DomainShift& shift, std::uint64_t noise_seed);
/// Rounds every pixel to the nearest k/255.
void quantize(det::Image& image);

Benchmark generate_benchmark(const SceneSpec& spec, const SplitCounts& counts, std::uint64_t seed);

}  // namespace metauda::bench
