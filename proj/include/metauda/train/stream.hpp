// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metauda/det/sample.hpp"

namespace metauda::train {

/// Everything needed to rebuild a stream's position. The visiting order of
/// an epoch is a pure function of (seed, epoch).
struct StreamState {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t cursor = 0;
  std::uint64_t reads = 0;

  bool operator==(const StreamState&) const = default;
};

/// Endless reshuffled pass over a split. Wraps with an info log line at each
/// epoch boundary.
class SampleStream {
 public:
  SampleStream(std::string name, std::span<const det::DetectionSample> samples, std::uint64_t seed);

  const det::DetectionSample& next();

  const std::string& name() const { return name_; }
  std::size_t size() const { return samples_.size(); }
  std::uint64_t reads() const { return state_.reads; }
  const StreamState& state() const { return state_; }
  void restore(const StreamState& state);

 private:
  void reshuffle();

  std::string name_;
  std::span<const det::DetectionSample> samples_;
  StreamState state_;
  std::vector<std::size_t> order_;
};

std::uint64_t splitmix64(std::uint64_t x);
/// Order-sensitive hash of several words.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);
std::uint64_t hash_string(const std::string& s);

}  // namespace metauda::train
