// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace metauda::det {

/// Axis-aligned box in pixel units; x_max and y_max are exclusive edges.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const;
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

Box clip_box(const Box& box, double width, double height);

struct Anchor {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  Box box() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

/// (dx, dy, dlog w, dlog h) relative to a reference box.
struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

BoxDelta encode_box(const Box& target, const Box& reference);
Box decode_box(const BoxDelta& delta, const Box& reference);

struct AnchorShape {
  double w = 0.0;
  double h = 0.0;
};

/// One anchor per shape at each feature cell center; index order is
/// (row, column, shape).
std::vector<Anchor> make_anchor_grid(std::size_t feature_h, std::size_t feature_w,
                                     double stride, const std::vector<AnchorShape>& shapes);

/// Greedy non-maximum suppression over boxes already sorted by descending
/// score. Returns kept positions, at most max_keep.
std::vector<std::size_t> nms_sorted(const std::vector<Box>& boxes, double iou_threshold,
                                    std::size_t max_keep);

/// Order of indices by descending score; equal scores keep index order.
std::vector<std::size_t> argsort_descending(const std::vector<double>& scores);

}  // namespace metauda::det
