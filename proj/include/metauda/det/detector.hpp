// SPDX-License-Identifier: Apache-2.0
//
// Miniature two-stage detector: a two-block conv encoder (stride 4), an
// anchor-based proposal network and a region head on 2×2 max-pooled ROI
// features.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metauda/autodiff/grad.hpp"
#include "metauda/det/box.hpp"
#include "metauda/det/sample.hpp"
#include "metauda/nn/layers.hpp"

namespace metauda::det {

using ad::ParameterSet;
using ad::Tensor;

struct DetectorConfig {
  std::size_t image_size = 32;
  std::size_t in_channels = 1;
  std::size_t stem_channels = 8;
  std::size_t feature_channels = 16;
  std::size_t rpn_channels = 16;
  std::size_t fc_dim = 128;
  std::size_t num_classes = 3;
  std::vector<AnchorShape> anchor_shapes{{8, 8}, {12, 12}, {5, 14}, {14, 5}};
  double pos_iou = 0.5;
  double neg_iou = 0.3;
  std::size_t max_proposals = 16;
  double proposal_nms_iou = 0.7;
  double rcnn_fg_iou = 0.5;
  double detection_nms_iou = 0.5;
  double min_detection_score = 1e-3;

  static constexpr std::size_t kStride = 4;
  static constexpr std::size_t kRoiBins = 2;

  std::size_t feature_size() const { return image_size / kStride; }
  std::size_t pooled_dim() const { return feature_channels * kRoiBins * kRoiBins; }
  /// Throws ContractViolation on inconsistent settings.
  void validate() const;
};

struct Proposal {
  Box box;
  double score = 0.0;
};

struct RpnOutput {
  Tensor logits;  // (A_total, 1) objectness logit per anchor
  Tensor deltas;  // (A_total, 4)
};

enum class AnchorLabel { kNegative, kPositive, kIgnore };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_index;        // -1 when not positive
  std::vector<BoxDelta> targets;    // meaningful for positives
  std::size_t positives() const;
};

/// Positive when IoU ≥ pos_iou with any gt, plus the highest-IoU anchor of
/// each gt; negative when the best IoU ≤ neg_iou; otherwise ignored. Ties go
/// to the lowest index.
AnchorAssignment assign_anchors(const std::vector<Anchor>& anchors,
                                const std::vector<GroundTruth>& gts, double pos_iou,
                                double neg_iou);

/// Max-pools each box of a (C,H,W) map over a 2×2 grid of sub-cells. Boxes
/// are in pixels and mapped to feature cells by ÷stride. A sub-cell less
/// than one feature cell wide or tall takes the single cell nearest its
/// center. Returns (boxes, C·2·2) in (channel, bin row, bin column) order.
Tensor roi_pool(const Tensor& features, const std::vector<Box>& boxes, double stride);

/// Records the proposal sets chosen by Detector::forward on this thread and
/// replays them later, so the box selection can be held fixed while
/// parameters move (the loss treats proposal boxes as constants).
struct ProposalTape {
  std::vector<std::vector<Proposal>> entries;
  std::size_t cursor = 0;
  bool replay = false;
};

/// Installs a tape for the current thread for the scope's lifetime.
class ProposalTapeScope {
 public:
  explicit ProposalTapeScope(ProposalTape& tape);
  ~ProposalTapeScope();
  ProposalTapeScope(const ProposalTapeScope&) = delete;
  ProposalTapeScope& operator=(const ProposalTapeScope&) = delete;

 private:
  ProposalTape* previous_;
};

struct DetectorOutput {
  Tensor f_img;                     // (C, H/4, W/4)
  std::vector<Anchor> anchors;
  RpnOutput rpn;
  std::vector<Proposal> proposals;  // sorted by score, at most max_proposals
  std::vector<Box> rois;            // proposals first, then any training gts
  std::size_t proposal_rois = 0;
  Tensor f_inst;                    // (rois, fc_dim)
  Tensor cls_logits;                // (rois, num_classes + 1); column 0 = background
  Tensor box_deltas;                // (rois, 4)

  /// F_inst rows that came from proposals.
  Tensor proposal_features() const;
};

struct DetectionLoss {
  Tensor rpn_cls;
  Tensor rpn_reg;
  Tensor rcnn_cls;
  Tensor rcnn_reg;
  Tensor total;
};

struct Detection {
  std::size_t class_id = 0;
  Box box;
  double score = 0.0;
};

class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }

  /// Parameters under "det/".
  ParameterSet init(std::mt19937_64& rng) const;

  /// (H,W,C) image tensor → (C,H,W) with the per-image mean removed.
  Tensor preprocess(const Tensor& image_hwc) const;
  Tensor image_tensor(const Image& image) const;

  /// Two conv+relu+pool blocks on a (H,W,C) image tensor.
  Tensor encoder_forward(const Tensor& image_hwc, const ParameterSet& params) const;
  RpnOutput rpn_forward(const Tensor& f_img, const ParameterSet& params) const;
  std::vector<Proposal> select_proposals(const RpnOutput& rpn) const;

  /// Full forward. Training gts, when given, are appended to the region-head
  /// inputs; with heads = false the class and box heads are skipped.
  DetectorOutput forward(const ParameterSet& params, const Image& image,
                         const std::vector<GroundTruth>* training_gts = nullptr,
                         bool heads = true) const;

  /// Scored, per-class NMS'd detections; no differentiation record.
  std::vector<Detection> detect(const ParameterSet& params, const Image& image) const;

 private:
  DetectorConfig config_;
  nn::Sequential encoder_;
  std::vector<Anchor> anchors_;
};

/// Sum of the four detection terms. Regression terms are averaged over
/// positives and are zero when there are none.
DetectionLoss detection_loss(const DetectorOutput& output, const std::vector<GroundTruth>& gts,
                             const DetectorConfig& config);
DetectionLoss detection_loss(const DetectorOutput& output, const DetectionSample& sample,
                             const DetectorConfig& config);

/// Region-head targets: class (0 = background) and box delta per roi.
struct RoiTargets {
  std::vector<std::size_t> labels;
  std::vector<BoxDelta> deltas;
};
RoiTargets assign_rois(const std::vector<Box>& rois, const std::vector<GroundTruth>& gts,
                       double fg_iou);

}  // namespace metauda::det
