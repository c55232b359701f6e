// SPDX-License-Identifier: Apache-2.0

#include "metauda/harness/map.hpp"

#include <algorithm>
#include <tuple>

namespace metauda::harness {

std::string to_string(ApVariant v) { return v == ApVariant::kAllPoint ? "allpoint" : "11pt"; }

ApVariant ap_variant_from_string(const std::string& name) {
  if (name == "allpoint") return ApVariant::kAllPoint;
  if (name == "11pt") return ApVariant::kElevenPoint;
  throw ad::ContractViolation("unknown AP variant '" + name + "' (allpoint|11pt)");
}

namespace {

struct Ranked {
  double score;
  std::uint64_t image;
  std::size_t order;
  const det::Box* box;
};

}  // namespace

MapResult evaluate_map(const DetectionsByImage& detections, const GroundTruthByImage& gts,
                       std::size_t num_classes, double iou_threshold, ApVariant variant) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ad::ContractViolation("evaluate_map: IoU threshold must lie in (0, 1]");
  }
  for (const auto& [id, dets] : detections) {
    if (!gts.count(id)) {
      throw ad::ContractViolation("evaluate_map: detections for unknown image " + std::to_string(id));
    }
    for (const auto& d : dets) {
      if (d.class_id >= num_classes) throw ad::ContractViolation("evaluate_map: class id out of range");
    }
  }

  MapResult result;
  result.variant = variant;
  result.iou_threshold = iou_threshold;
  double ap_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassAp cls;
    cls.class_id = c;
    std::map<std::uint64_t, std::vector<const det::Box*>> class_gts;
    for (const auto& [id, list] : gts) {
      for (const auto& g : list) {
        if (g.class_id >= num_classes) throw ad::ContractViolation("evaluate_map: gt class out of range");
        if (g.class_id == c) class_gts[id].push_back(&g.box);
      }
    }
    for (const auto& [id, boxes] : class_gts) cls.num_gt += boxes.size();
    if (cls.num_gt == 0) continue;

    std::vector<Ranked> ranked;
    for (const auto& [id, dets] : detections) {
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].class_id == c) ranked.push_back({dets[i].score, id, i, &dets[i].box});
      }
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.image, a.order) < std::tie(b.image, b.order);
    });
    cls.num_detections = ranked.size();

    std::map<std::uint64_t, std::vector<bool>> taken;
    std::size_t tp = 0;
    std::vector<std::size_t> tp_at;  // cumulative true positives per rank
    std::vector<bool> is_tp;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      const auto it = class_gts.find(ranked[k].image);
      bool hit = false;
      if (it != class_gts.end()) {
        auto& used = taken[ranked[k].image];
        used.resize(it->second.size(), false);
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < it->second.size(); ++j) {
          if (used[j]) continue;
          const double v = det::iou(*ranked[k].box, *it->second[j]);
          if (v > best) {
            best = v;
            best_j = j;
          }
        }
        if (best >= iou_threshold) {
          used[best_j] = true;
          hit = true;
        }
      }
      tp += hit;
      tp_at.push_back(tp);
      is_tp.push_back(hit);
      cls.curve.push_back({double(tp) / double(cls.num_gt), double(tp) / double(k + 1), ranked[k].score});
    }

    // Precision envelope: best precision at this rank or any later one.
    std::vector<double> envelope(ranked.size());
    double running = 0.0;
    for (std::size_t k = ranked.size(); k-- > 0;) {
      running = std::max(running, cls.curve[k].precision);
      envelope[k] = running;
    }
    if (variant == ApVariant::kAllPoint) {
      // Recall rises by 1/num_gt at each true positive.
      double sum = 0.0;
      for (std::size_t k = 0; k < ranked.size(); ++k) {
        if (is_tp[k]) sum += envelope[k];
      }
      cls.ap = sum / double(cls.num_gt);
    } else {
      double sum = 0.0;
      for (std::size_t t = 0; t <= 10; ++t) {
        // First rank whose recall reaches t/10.
        for (std::size_t k = 0; k < ranked.size(); ++k) {
          if (tp_at[k] * 10 >= t * cls.num_gt) {
            sum += envelope[k];
            break;
          }
        }
      }
      cls.ap = sum / 11.0;
    }
    ap_sum += cls.ap;
    result.classes.push_back(std::move(cls));
  }
  result.map = result.classes.empty() ? 0.0 : ap_sum / double(result.classes.size());
  return result;
}

}  // namespace metauda::harness
