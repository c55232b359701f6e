// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metauda/det/box.hpp"

namespace metauda::det {

/// Row-major H×W×C image with values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

struct GroundTruth {
  std::size_t class_id = 0;
  Box box;

  bool operator==(const GroundTruth&) const = default;
};

enum class Domain { kSource, kTarget };

std::string to_string(Domain domain);
Domain domain_from_string(const std::string& name);

struct DetectionSample {
  std::uint64_t id = 0;
  Image image;
  /// Absent for unlabeled target-domain samples.
  std::optional<std::vector<GroundTruth>> labels;
  Domain domain = Domain::kSource;

  bool labeled() const { return labels.has_value(); }
  bool operator==(const DetectionSample&) const = default;
};

}  // namespace metauda::det
