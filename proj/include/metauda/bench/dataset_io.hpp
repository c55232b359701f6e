// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout (see schemas/dataset.schema.json):
//   <dir>/manifest.json        spec, seed and one entry per sample
//   <dir>/sealed_labels.json   target labels, read only by oracle and eval
//   <dir>/images/<split>/<id>.png   8-bit grayscale

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "metauda/bench/synth.hpp"

namespace metauda::bench {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Target-domain labels found where only sealed labels may live.
class LeakageError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

void export_dataset(const Benchmark& benchmark, const std::filesystem::path& dir);
Benchmark import_dataset(const std::filesystem::path& dir);

void write_png_gray8(const std::filesystem::path& path, const det::Image& image);
det::Image read_png_gray8(const std::filesystem::path& path);

}  // namespace metauda::bench
