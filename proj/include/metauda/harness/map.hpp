// SPDX-License-Identifier: Apache-2.0
//
// Detection mAP at a fixed IoU threshold.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metauda/det/detector.hpp"

namespace metauda::harness {

enum class ApVariant { kAllPoint, kElevenPoint };

std::string to_string(ApVariant v);
/// Accepts "allpoint" and "11pt".
ApVariant ap_variant_from_string(const std::string& name);

/// Keyed by sample id. Box order within an image is the vector order.
using DetectionsByImage = std::map<std::uint64_t, std::vector<det::Detection>>;
using GroundTruthByImage = std::map<std::uint64_t, std::vector<det::GroundTruth>>;

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;

  bool operator==(const PrPoint&) const = default;
};

struct ClassAp {
  std::size_t class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
  double ap = 0.0;
  std::vector<PrPoint> curve;  // one point per detection in rank order

  bool operator==(const ClassAp&) const = default;
};

struct MapResult {
  ApVariant variant = ApVariant::kAllPoint;
  double iou_threshold = 0.5;
  /// Classes with at least one ground-truth box; mAP averages these.
  std::vector<ClassAp> classes;
  double map = 0.0;

  bool operator==(const MapResult&) const = default;
};

/// Detections are ranked by descending score, ties by sample id then box
/// order. Each detection takes the unmatched same-class gt of highest IoU
/// (lowest index on ties) and is a true positive iff that IoU ≥ threshold.
/// Throws ContractViolation for detections on images absent from gts.
MapResult evaluate_map(const DetectionsByImage& detections, const GroundTruthByImage& gts,
                       std::size_t num_classes, double iou_threshold = 0.5,
                       ApVariant variant = ApVariant::kAllPoint);

}  // namespace metauda::harness
