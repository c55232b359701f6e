// SPDX-License-Identifier: Apache-2.0

#include "metauda/train/stream.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "metauda/autodiff/tensor.hpp"
#include "metauda/util/log.hpp"

namespace metauda::train {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001B3ULL;
  return h;
}

SampleStream::SampleStream(std::string name, std::span<const det::DetectionSample> samples,
                           std::uint64_t seed)
    : name_(std::move(name)), samples_(samples) {
  state_.seed = seed;
  reshuffle();
}

void SampleStream::reshuffle() {
  order_.resize(samples_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Fisher-Yates with explicit draws; std::shuffle's sequence is
  // implementation-defined.
  std::mt19937_64 rng(mix_seed({state_.seed, state_.epoch}));
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order_[i - 1], order_[j]);
  }
}

const det::DetectionSample& SampleStream::next() {
  if (samples_.empty()) throw ad::ContractViolation("stream " + name_ + " is empty");
  if (state_.cursor == samples_.size()) {
    ++state_.epoch;
    state_.cursor = 0;
    reshuffle();
    log::debug("stream " + name_ + ": wrapped into epoch " + std::to_string(state_.epoch));
  }
  ++state_.reads;
  return samples_[order_[state_.cursor++]];
}

void SampleStream::restore(const StreamState& state) {
  if (state.cursor > samples_.size()) throw ad::ContractViolation("stream " + name_ + ": bad cursor");
  state_ = state;
  reshuffle();
}

}  // namespace metauda::train
