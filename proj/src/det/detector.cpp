// SPDX-License-Identifier: Apache-2.0

#include "metauda/det/detector.hpp"

#include <algorithm>
#include <cmath>

#include "metauda/autodiff/ops.hpp"

namespace metauda::det {

using ad::ContractViolation;

std::string to_string(Domain domain) {
  return domain == Domain::kSource ? "source" : "target";
}

Domain domain_from_string(const std::string& name) {
  if (name == "source") return Domain::kSource;
  if (name == "target") return Domain::kTarget;
  throw ContractViolation("unknown domain '" + name + "'");
}

void DetectorConfig::validate() const {
  if (image_size == 0 || image_size % kStride != 0) {
    throw ContractViolation("image size " + std::to_string(image_size) +
                            " is not divisible by the encoder stride " + std::to_string(kStride));
  }
  if (in_channels != 1 && in_channels != 3) {
    throw ContractViolation("images must have 1 or 3 channels");
  }
  if (stem_channels == 0 || feature_channels == 0 || rpn_channels == 0 || fc_dim == 0 ||
      num_classes == 0 || max_proposals == 0 || anchor_shapes.empty()) {
    throw ContractViolation("detector widths, class count and proposal cap must be positive");
  }
  if (!(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0)) {
    throw ContractViolation("anchor thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1");
  }
}

std::size_t AnchorAssignment::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), AnchorLabel::kPositive));
}

AnchorAssignment assign_anchors(const std::vector<Anchor>& anchors,
                                const std::vector<GroundTruth>& gts, double pos_iou,
                                double neg_iou) {
  if (!(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0)) {
    throw ContractViolation("assign_anchors: thresholds must satisfy 0 <= neg <= pos <= 1");
  }
  const std::size_t n = anchors.size();
  AnchorAssignment out;
  out.labels.assign(n, AnchorLabel::kNegative);
  out.gt_index.assign(n, -1);
  out.targets.assign(n, {});
  if (gts.empty()) return out;

  std::vector<Box> boxes(n);
  for (std::size_t a = 0; a < n; ++a) boxes[a] = anchors[a].box();

  for (std::size_t a = 0; a < n; ++a) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(boxes[a], gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= pos_iou) {
      out.labels[a] = AnchorLabel::kPositive;
      out.gt_index[a] = best_gt;
    } else if (best <= neg_iou) {
      out.labels[a] = AnchorLabel::kNegative;
    } else {
      out.labels[a] = AnchorLabel::kIgnore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    std::size_t best_anchor = n;
    for (std::size_t a = 0; a < n; ++a) {
      const double v = iou(boxes[a], gts[g].box);
      if (v > best) {
        best = v;
        best_anchor = a;
      }
    }
    if (best_anchor < n) {
      out.labels[best_anchor] = AnchorLabel::kPositive;
      out.gt_index[best_anchor] = static_cast<int>(g);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (out.labels[a] == AnchorLabel::kPositive) {
      out.targets[a] = encode_box(gts[static_cast<std::size_t>(out.gt_index[a])].box, boxes[a]);
    }
  }
  return out;
}

namespace {

// Feature cells [start, end) pooled by one bin spanning [lo, hi).
std::pair<std::size_t, std::size_t> bin_cells(double lo, double hi, std::size_t extent) {
  const auto nearest = [&](double v) {
    const double c = std::clamp(std::floor(v), 0.0, static_cast<double>(extent - 1));
    return static_cast<std::size_t>(c);
  };
  if (hi - lo < 1.0) {
    const std::size_t c = nearest(0.5 * (lo + hi));
    return {c, c + 1};
  }
  const double start = std::clamp(std::floor(lo), 0.0, static_cast<double>(extent));
  const double end = std::clamp(std::ceil(hi), 0.0, static_cast<double>(extent));
  if (start >= end) {
    const std::size_t c = nearest(0.5 * (lo + hi));
    return {c, c + 1};
  }
  return {static_cast<std::size_t>(start), static_cast<std::size_t>(end)};
}

}  // namespace

Tensor roi_pool(const Tensor& features, const std::vector<Box>& boxes, double stride) {
  if (features.dim() != 3) throw ContractViolation("roi_pool: expected a (C,H,W) map");
  const std::size_t c = features.size(0), h = features.size(1), w = features.size(2);
  const std::size_t bins = DetectorConfig::kRoiBins;
  auto F = features.data();
  std::vector<std::size_t> index;
  index.reserve(boxes.size() * c * bins * bins);
  const double eps = 1e-9;
  for (const auto& box : boxes) {
    if (!box.valid() || box.x_min < -eps || box.y_min < -eps ||
        box.x_max > static_cast<double>(w) * stride + eps ||
        box.y_max > static_cast<double>(h) * stride + eps) {
      throw ContractViolation("roi_pool: box must be valid and clipped to the feature map");
    }
    const double fx0 = box.x_min / stride, fx1 = box.x_max / stride;
    const double fy0 = box.y_min / stride, fy1 = box.y_max / stride;
    const double bw = (fx1 - fx0) / bins, bh = (fy1 - fy0) / bins;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t by = 0; by < bins; ++by) {
        const auto [y0, y1] = bin_cells(fy0 + by * bh, fy0 + (by + 1) * bh, h);
        for (std::size_t bx = 0; bx < bins; ++bx) {
          const auto [x0, x1] = bin_cells(fx0 + bx * bw, fx0 + (bx + 1) * bw, w);
          std::size_t best = (ch * h + y0) * w + x0;
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
              const std::size_t at = (ch * h + y) * w + x;
              if (F[at] > F[best]) best = at;
            }
          }
          index.push_back(best);
        }
      }
    }
  }
  return ad::gather(features, index, {boxes.size(), c * bins * bins});
}

namespace {
thread_local ProposalTape* t_tape = nullptr;
}  // namespace

ProposalTapeScope::ProposalTapeScope(ProposalTape& tape) : previous_(t_tape) { t_tape = &tape; }
ProposalTapeScope::~ProposalTapeScope() { t_tape = previous_; }

Tensor DetectorOutput::proposal_features() const {
  if (proposal_rois == 0) return {};
  if (proposal_rois == rois.size()) return f_inst;
  return ad::slice(f_inst, {0, 0}, {proposal_rois, f_inst.size(1)});
}

Detector::Detector(DetectorConfig config)
    : config_((config.validate(), std::move(config))),
      encoder_({nn::LayerSpec::conv(3, config_.stem_channels), nn::LayerSpec::relu(),
                nn::LayerSpec::pool(2), nn::LayerSpec::conv(3, config_.feature_channels),
                nn::LayerSpec::relu(), nn::LayerSpec::pool(2)},
               {config_.in_channels, config_.image_size, config_.image_size}, "det/enc"),
      anchors_(make_anchor_grid(config_.feature_size(), config_.feature_size(),
                                static_cast<double>(DetectorConfig::kStride),
                                config_.anchor_shapes)) {}

ParameterSet Detector::init(std::mt19937_64& rng) const {
  ParameterSet p = encoder_.init(rng);
  const std::size_t c = config_.feature_channels, r = config_.rpn_channels;
  const std::size_t a = config_.anchor_shapes.size();
  p.insert("det/rpn/conv/weight", nn::uniform_init({r, c, 3, 3}, c * 9, rng));
  p.insert("det/rpn/conv/bias", Tensor::zeros({r}));
  p.insert("det/rpn/obj/weight", nn::uniform_init({a, r, 1, 1}, r, rng));
  p.insert("det/rpn/obj/bias", Tensor::zeros({a}));
  p.insert("det/rpn/delta/weight", nn::uniform_init({4 * a, r, 1, 1}, r, rng));
  p.insert("det/rpn/delta/bias", Tensor::zeros({4 * a}));
  const std::size_t pooled = config_.pooled_dim(), f = config_.fc_dim;
  p.insert("det/rcnn/fc/weight", nn::uniform_init({pooled, f}, pooled, rng));
  p.insert("det/rcnn/fc/bias", Tensor::zeros({f}));
  p.insert("det/rcnn/cls/weight", nn::uniform_init({f, config_.num_classes + 1}, f, rng));
  p.insert("det/rcnn/cls/bias", Tensor::zeros({config_.num_classes + 1}));
  p.insert("det/rcnn/reg/weight", nn::uniform_init({f, 4}, f, rng));
  p.insert("det/rcnn/reg/bias", Tensor::zeros({4}));
  return p;
}

Tensor Detector::preprocess(const Tensor& image) const {
  const std::size_t s = config_.image_size, ch = config_.in_channels;
  if (image.shape() != ad::Shape{s, s, ch}) {
    throw ContractViolation("encoder: expected a " + ad::shape_str({s, s, ch}) +
                            " image, got " + ad::shape_str(image.shape()));
  }
  auto px = image.data();
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(px.size());
  std::vector<double> chw(px.size());
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      for (std::size_t c = 0; c < ch; ++c) chw[(c * s + y) * s + x] = px[(y * s + x) * ch + c] - mean;
    }
  }
  return Tensor({ch, s, s}, std::move(chw));
}

Tensor Detector::image_tensor(const Image& image) const {
  return Tensor({image.height, image.width, image.channels}, image.pixels);
}

Tensor Detector::encoder_forward(const Tensor& image_hwc, const ParameterSet& params) const {
  return encoder_.forward(params, preprocess(image_hwc), {});
}

RpnOutput Detector::rpn_forward(const Tensor& f_img, const ParameterSet& params) const {
  const std::size_t fs = config_.feature_size();
  const std::size_t a = config_.anchor_shapes.size();
  if (f_img.shape() != ad::Shape{config_.feature_channels, fs, fs}) {
    throw ContractViolation("rpn: feature map shape " + ad::shape_str(f_img.shape()));
  }
  Tensor h = ad::relu(nn::add_channel_bias(ad::conv2d(f_img, params.at("det/rpn/conv/weight"), 1),
                                           params.at("det/rpn/conv/bias")));
  Tensor obj = nn::add_channel_bias(ad::conv2d(h, params.at("det/rpn/obj/weight"), 0),
                                    params.at("det/rpn/obj/bias"));
  Tensor del = nn::add_channel_bias(ad::conv2d(h, params.at("det/rpn/delta/weight"), 0),
                                    params.at("det/rpn/delta/bias"));
  const std::size_t cells = fs * fs, n = cells * a;
  std::vector<std::size_t> obj_index(n), del_index(n * 4);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t k = 0; k < a; ++k) {
      const std::size_t anchor = cell * a + k;
      obj_index[anchor] = k * cells + cell;
      for (std::size_t j = 0; j < 4; ++j) del_index[anchor * 4 + j] = (k * 4 + j) * cells + cell;
    }
  }
  return {ad::gather(obj, obj_index, {n, 1}), ad::gather(del, del_index, {n, 4})};
}

std::vector<Proposal> Detector::select_proposals(const RpnOutput& rpn) const {
  const double extent = static_cast<double>(config_.image_size);
  auto logits = rpn.logits.data();
  auto deltas = rpn.deltas.data();
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    const BoxDelta d{deltas[i * 4], deltas[i * 4 + 1], deltas[i * 4 + 2], deltas[i * 4 + 3]};
    Box b = clip_box(decode_box(d, anchors_[i].box()), extent, extent);
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    boxes.push_back(b);
    scores.push_back(1.0 / (1.0 + std::exp(-logits[i])));
  }
  const auto order = argsort_descending(scores);
  std::vector<Box> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(boxes[i]);
  const auto keep = nms_sorted(sorted, config_.proposal_nms_iou, config_.max_proposals);
  std::vector<Proposal> out;
  out.reserve(keep.size());
  for (auto k : keep) out.push_back({sorted[k], scores[order[k]]});
  return out;
}

DetectorOutput Detector::forward(const ParameterSet& params, const Image& image,
                                 const std::vector<GroundTruth>* training_gts, bool heads) const {
  DetectorOutput out;
  out.f_img = encoder_forward(image_tensor(image), params);
  out.anchors = anchors_;
  out.rpn = rpn_forward(out.f_img, params);
  if (t_tape && t_tape->replay) {
    if (t_tape->cursor >= t_tape->entries.size()) {
      throw ContractViolation("proposal tape exhausted");
    }
    out.proposals = t_tape->entries[t_tape->cursor++];
  } else {
    out.proposals = select_proposals(out.rpn);
    if (t_tape) t_tape->entries.push_back(out.proposals);
  }
  for (const auto& p : out.proposals) out.rois.push_back(p.box);
  out.proposal_rois = out.rois.size();
  if (training_gts) {
    for (const auto& g : *training_gts) out.rois.push_back(g.box);
  }
  if (out.rois.empty()) return out;
  Tensor pooled = roi_pool(out.f_img, out.rois, static_cast<double>(DetectorConfig::kStride));
  out.f_inst = ad::relu(
      nn::linear(pooled, params.at("det/rcnn/fc/weight"), params.at("det/rcnn/fc/bias")));
  if (heads) {
    out.cls_logits =
        nn::linear(out.f_inst, params.at("det/rcnn/cls/weight"), params.at("det/rcnn/cls/bias"));
    out.box_deltas =
        nn::linear(out.f_inst, params.at("det/rcnn/reg/weight"), params.at("det/rcnn/reg/bias"));
  }
  return out;
}

std::vector<Detection> Detector::detect(const ParameterSet& params, const Image& image) const {
  ad::NoGradGuard no_grad;
  const DetectorOutput out = forward(params, image);
  std::vector<Detection> result;
  if (out.proposal_rois == 0) return result;
  const Tensor probs = ad::softmax_rows(out.cls_logits);
  const std::size_t k = config_.num_classes + 1;
  const double extent = static_cast<double>(config_.image_size);
  auto P = probs.data();
  auto D = out.box_deltas.data();
  for (std::size_t cls = 1; cls < k; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < out.proposal_rois; ++i) {
      const double s = P[i * k + cls];
      if (s < config_.min_detection_score) continue;
      const BoxDelta d{D[i * 4], D[i * 4 + 1], D[i * 4 + 2], D[i * 4 + 3]};
      Box b = clip_box(decode_box(d, out.rois[i]), extent, extent);
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(s);
    }
    const auto order = argsort_descending(scores);
    std::vector<Box> sorted;
    for (auto i : order) sorted.push_back(boxes[i]);
    for (auto keep : nms_sorted(sorted, config_.detection_nms_iou, sorted.size())) {
      result.push_back({cls - 1, sorted[keep], scores[order[keep]]});
    }
  }
  return result;
}

RoiTargets assign_rois(const std::vector<Box>& rois, const std::vector<GroundTruth>& gts,
                       double fg_iou) {
  RoiTargets t;
  t.labels.assign(rois.size(), 0);
  t.deltas.assign(rois.size(), {});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    double best = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(rois[r], gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= fg_iou) {
      t.labels[r] = gts[best_gt].class_id + 1;
      t.deltas[r] = encode_box(gts[best_gt].box, rois[r]);
    }
  }
  return t;
}

namespace {

Tensor delta_tensor(const std::vector<BoxDelta>& deltas) {
  std::vector<double> v;
  v.reserve(deltas.size() * 4);
  for (const auto& d : deltas) v.insert(v.end(), {d.dx, d.dy, d.dw, d.dh});
  return Tensor({deltas.size(), 4}, std::move(v));
}

// Sum over the four coordinates, mean over rows.
Tensor regression_term(const Tensor& pred_rows, const std::vector<BoxDelta>& targets) {
  return ad::mul(nn::smooth_l1(pred_rows, delta_tensor(targets)), 4.0);
}

}  // namespace

DetectionLoss detection_loss(const DetectorOutput& output, const std::vector<GroundTruth>& gts,
                             const DetectorConfig& config) {
  DetectionLoss loss;
  const auto assignment = assign_anchors(output.anchors, gts, config.pos_iou, config.neg_iou);
  std::vector<std::size_t> used, labels, positives;
  std::vector<BoxDelta> anchor_targets;
  for (std::size_t a = 0; a < assignment.labels.size(); ++a) {
    if (assignment.labels[a] == AnchorLabel::kIgnore) continue;
    used.push_back(a);
    const bool pos = assignment.labels[a] == AnchorLabel::kPositive;
    labels.push_back(pos ? 1 : 0);
    if (pos) {
      positives.push_back(a);
      anchor_targets.push_back(assignment.targets[a]);
    }
  }
  if (used.empty()) {
    loss.rpn_cls = Tensor::scalar(0.0);
  } else {
    // Two-way softmax over [0, z] is the logistic loss on z.
    Tensor z = ad::rows(output.rpn.logits, used);
    loss.rpn_cls = nn::softmax_ce(ad::concat({Tensor::zeros(z.shape()), z}, 1), labels);
  }
  loss.rpn_reg = positives.empty()
                     ? Tensor::scalar(0.0)
                     : regression_term(ad::rows(output.rpn.deltas, positives), anchor_targets);

  if (output.rois.empty()) {
    loss.rcnn_cls = Tensor::scalar(0.0);
    loss.rcnn_reg = Tensor::scalar(0.0);
  } else {
    if (!output.cls_logits.defined()) {
      throw ContractViolation("detection_loss: detector output lacks region-head predictions");
    }
    const auto targets = assign_rois(output.rois, gts, config.rcnn_fg_iou);
    loss.rcnn_cls = nn::softmax_ce(output.cls_logits, targets.labels);
    std::vector<std::size_t> fg;
    std::vector<BoxDelta> fg_targets;
    for (std::size_t r = 0; r < targets.labels.size(); ++r) {
      if (targets.labels[r] != 0) {
        fg.push_back(r);
        fg_targets.push_back(targets.deltas[r]);
      }
    }
    loss.rcnn_reg = fg.empty() ? Tensor::scalar(0.0)
                               : regression_term(ad::rows(output.box_deltas, fg), fg_targets);
  }
  loss.total = ad::add(ad::add(loss.rpn_cls, loss.rpn_reg), ad::add(loss.rcnn_cls, loss.rcnn_reg));
  return loss;
}

DetectionLoss detection_loss(const DetectorOutput& output, const DetectionSample& sample,
                             const DetectorConfig& config) {
  if (!sample.labeled()) {
    throw ContractViolation("detection_loss: sample " + std::to_string(sample.id) +
                            " carries no labels");
  }
  return detection_loss(output, *sample.labels, config);
}

}  // namespace metauda::det
