// SPDX-License-Identifier: Apache-2.0

#include "metauda/det/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metauda::det {

double Box::area() const { return valid() ? width() * height() : 0.0; }

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box clip_box(const Box& box, double width, double height) {
  return {std::clamp(box.x_min, 0.0, width), std::clamp(box.y_min, 0.0, height),
          std::clamp(box.x_max, 0.0, width), std::clamp(box.y_max, 0.0, height)};
}

BoxDelta encode_box(const Box& target, const Box& reference) {
  const double rw = reference.width(), rh = reference.height();
  return {(target.center_x() - reference.center_x()) / rw,
          (target.center_y() - reference.center_y()) / rh, std::log(target.width() / rw),
          std::log(target.height() / rh)};
}

Box decode_box(const BoxDelta& delta, const Box& reference) {
  const double rw = reference.width(), rh = reference.height();
  const double cx = reference.center_x() + delta.dx * rw;
  const double cy = reference.center_y() + delta.dy * rh;
  // Clamp the log-scale so an untrained head cannot overflow exp().
  const double w = rw * std::exp(std::min(delta.dw, 4.0));
  const double h = rh * std::exp(std::min(delta.dh, 4.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Anchor> make_anchor_grid(std::size_t feature_h, std::size_t feature_w,
                                     double stride, const std::vector<AnchorShape>& shapes) {
  std::vector<Anchor> anchors;
  anchors.reserve(feature_h * feature_w * shapes.size());
  for (std::size_t y = 0; y < feature_h; ++y) {
    for (std::size_t x = 0; x < feature_w; ++x) {
      for (const auto& s : shapes) {
        anchors.push_back({(static_cast<double>(x) + 0.5) * stride,
                           (static_cast<double>(y) + 0.5) * stride, s.w, s.h});
      }
    }
  }
  return anchors;
}

std::vector<std::size_t> nms_sorted(const std::vector<Box>& boxes, double iou_threshold,
                                    std::size_t max_keep) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < boxes.size() && keep.size() < max_keep; ++i) {
    bool suppressed = false;
    for (auto k : keep) {
      if (iou(boxes[i], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::vector<std::size_t> argsort_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace metauda::det
