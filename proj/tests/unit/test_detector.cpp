// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "metauda/det/detector.hpp"
#include "support/frozen.hpp"
#include "support/gradcheck.hpp"

using namespace metauda;
using namespace metauda::det;
using metauda::testing::check_gradient;
using metauda::testing::random_tensor;
using metauda::testing::with_frozen_proposals;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t size, std::size_t channels = 1) {
  Image im{size, size, channels, std::vector<double>(size * size * channels)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : im.pixels) v = u(rng);
  return im;
}

// Nested-loop reference: a cell belongs to a bin when its unit interval
// meets the open bin interval; thin bins take the cell under their center.
std::vector<std::size_t> reference_cells(double lo, double hi, std::size_t extent) {
  std::vector<std::size_t> cells;
  if (hi - lo < 1.0) {
    const double center = 0.5 * (lo + hi);
    long c = static_cast<long>(std::floor(center));
    c = std::max(0L, std::min(c, static_cast<long>(extent) - 1));
    return {static_cast<std::size_t>(c)};
  }
  for (std::size_t j = 0; j < extent; ++j) {
    if (static_cast<double>(j) < hi && static_cast<double>(j + 1) > lo) cells.push_back(j);
  }
  return cells;
}

std::vector<double> reference_roi_pool(const Tensor& f, const Box& b, double stride) {
  const std::size_t c = f.size(0), h = f.size(1), w = f.size(2);
  std::vector<double> out;
  const double x0 = b.x_min / stride, x1 = b.x_max / stride;
  const double y0 = b.y_min / stride, y1 = b.y_max / stride;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int by = 0; by < 2; ++by) {
      const auto ys = reference_cells(y0 + by * (y1 - y0) / 2, y0 + (by + 1) * (y1 - y0) / 2, h);
      for (int bx = 0; bx < 2; ++bx) {
        const auto xs =
            reference_cells(x0 + bx * (x1 - x0) / 2, x0 + (bx + 1) * (x1 - x0) / 2, w);
        double best = -INFINITY;
        for (auto y : ys)
          for (auto x : xs) best = std::max(best, f.data()[(ch * h + y) * w + x]);
        out.push_back(best);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("iou properties") {
  const Box a{0, 0, 4, 4}, b{2, 2, 6, 6}, far{10, 10, 12, 12};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, b) == iou(b, a));
  CHECK(iou(a, b) == doctest::Approx(4.0 / 28.0));
  CHECK(iou(a, far) == 0.0);
  CHECK(iou(a, Box{4, 0, 8, 4}) == 0.0);  // shared edge only
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 20);
  for (int i = 0; i < 500; ++i) {
    Box p{u(rng), u(rng), 0, 0}, q{u(rng), u(rng), 0, 0};
    p.x_max = p.x_min + 1 + u(rng);
    p.y_max = p.y_min + 1 + u(rng);
    q.x_max = q.x_min + 1 + u(rng);
    q.y_max = q.y_min + 1 + u(rng);
    CHECK(iou(p, q) == iou(q, p));
    CHECK(iou(p, q) >= 0.0);
    CHECK(iou(p, q) <= 1.0);
  }
}

TEST_CASE("box decode examples and round trip") {
  const Box anchor = Anchor{10, 12, 8, 6}.box();
  CHECK(decode_box({}, anchor) == anchor);
  const Box wide = decode_box({0, 0, std::log(2.0), 0}, anchor);
  CHECK(wide.width() == doctest::Approx(2 * anchor.width()).epsilon(1e-15));
  CHECK(wide.height() == anchor.height());
  CHECK(wide.center_x() == anchor.center_x());

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0, 30), size(1, 20);
  for (int i = 0; i < 1000; ++i) {
    const Box ref = Anchor{pos(rng), pos(rng), size(rng), size(rng)}.box();
    const Box target = Anchor{pos(rng), pos(rng), size(rng), size(rng)}.box();
    const Box back = decode_box(encode_box(target, ref), ref);
    CHECK(std::abs(back.x_min - target.x_min) < 1e-9);
    CHECK(std::abs(back.y_min - target.y_min) < 1e-9);
    CHECK(std::abs(back.x_max - target.x_max) < 1e-9);
    CHECK(std::abs(back.y_max - target.y_max) < 1e-9);
  }
}

TEST_CASE("anchor grid") {
  Detector det(DetectorConfig{});
  CHECK(det.anchors().size() == 256);
  const Anchor& first = det.anchors()[0];
  CHECK(first.cx == 2.0);
  CHECK(first.cy == 2.0);
  CHECK(det.anchors()[4].cx == 6.0);  // next cell in the row
  CHECK(det.anchors()[32].cy == 6.0);
}

TEST_CASE("assign_anchors") {
  const auto anchors = make_anchor_grid(8, 8, 4.0, DetectorConfig{}.anchor_shapes);

  SUBCASE("gt equal to an anchor") {
    const Box box = anchors[37].box();
    auto a = assign_anchors(anchors, {{0, box}}, 0.5, 0.3);
    CHECK(a.labels[37] == AnchorLabel::kPositive);
    CHECK(a.gt_index[37] == 0);
    CHECK(a.targets[37].dx == 0.0);
    CHECK(a.targets[37].dy == 0.0);
    CHECK(a.targets[37].dw == 0.0);
    CHECK(a.targets[37].dh == 0.0);
  }
  SUBCASE("weak overlap yields exactly the argmax anchor") {
    const Box gt{13.0, 13.0, 15.0, 15.5};  // tiny box, best IoU well below 0.3
    double best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const double v = iou(anchors[i].box(), gt);
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    REQUIRE(best < 0.3);
    auto a = assign_anchors(anchors, {{1, gt}}, 0.5, 0.3);
    CHECK(a.positives() == 1);
    CHECK(a.labels[best_i] == AnchorLabel::kPositive);
  }
  SUBCASE("no gts") {
    auto a = assign_anchors(anchors, {}, 0.5, 0.3);
    CHECK(a.positives() == 0);
    CHECK(std::all_of(a.labels.begin(), a.labels.end(),
                      [](AnchorLabel l) { return l == AnchorLabel::kNegative; }));
  }
  CHECK_THROWS_AS(assign_anchors(anchors, {}, 0.3, 0.5), ad::ContractViolation);
}

TEST_CASE("roi_pool") {
  SUBCASE("constant map") {
    Tensor f = Tensor::full({16, 8, 8}, 3.0);
    Tensor p = roi_pool(f, {{0, 0, 32, 32}, {5, 6, 13, 20}}, 4.0);
    CHECK(p.shape() == ad::Shape{2, 64});
    for (double v : p.data()) CHECK(v == 3.0);
  }
  SUBCASE("one-cell box replicates the cell") {
    std::mt19937_64 rng(1);
    Tensor f = random_tensor(rng, {2, 8, 8});
    Tensor p = roi_pool(f, {{8, 12, 12, 16}}, 4.0);  // feature cell (y=3, x=2)
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < 4; ++k) CHECK(p[c * 4 + k] == f.data()[(c * 8 + 3) * 8 + 2]);
    }
  }
  SUBCASE("matches the nested-loop reference") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> q(0, 128);  // quarter-pixel grid over 32 px
    for (int trial = 0; trial < 300; ++trial) {
      Tensor f = random_tensor(rng, {3, 8, 8});
      double a = q(rng) / 4.0, b = q(rng) / 4.0, c = q(rng) / 4.0, d = q(rng) / 4.0;
      if (a == b || c == d) continue;
      const Box box{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
      Tensor p = roi_pool(f, {box}, 4.0);
      const auto ref = reference_roi_pool(f, box, 4.0);
      for (std::size_t k = 0; k < ref.size(); ++k) CHECK(p[k] == ref[k]);
    }
  }
  CHECK_THROWS_AS(roi_pool(Tensor::zeros({1, 8, 8}), {{40, 40, 50, 50}}, 4.0),
                  ad::ContractViolation);
  CHECK_THROWS_AS(roi_pool(Tensor::zeros({1, 8, 8}), {{4, 4, 4, 8}}, 4.0),
                  ad::ContractViolation);
}

TEST_CASE("encoder shape, determinism and translation") {
  Detector det(DetectorConfig{});
  std::mt19937_64 rng(7);
  ParameterSet params = det.init(rng);

  const Image zero{32, 32, 1, std::vector<double>(32 * 32, 0.0)};
  Tensor f0 = det.encoder_forward(det.image_tensor(zero), params);
  CHECK(f0.shape() == ad::Shape{16, 8, 8});
  for (double v : f0.data()) CHECK(std::isfinite(v));

  const Image im = random_image(rng, 32);
  CHECK(det.encoder_forward(det.image_tensor(im), params)
            .same_values(det.encoder_forward(det.image_tensor(im), params)));

  // Content confined to the middle so the 4px shift keeps the pixel mean.
  Image base{32, 32, 1, std::vector<double>(32 * 32, 0.0)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t y = 8; y < 24; ++y)
    for (std::size_t x = 6; x < 22; ++x) base.pixels[y * 32 + x] = u(rng);
  Image shifted = base;
  std::fill(shifted.pixels.begin(), shifted.pixels.end(), 0.0);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 4; x < 32; ++x) shifted.pixels[y * 32 + x] = base.pixels[y * 32 + x - 4];
  Tensor fa = det.encoder_forward(det.image_tensor(base), params);
  Tensor fb = det.encoder_forward(det.image_tensor(shifted), params);
  // Cell x reads pixels 4x-3 .. 4x+6, so cells 1..6 never touch padding.
  std::size_t compared = 0;
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t y = 1; y <= 6; ++y)
      for (std::size_t x = 1; x <= 5; ++x) {
        CHECK(fb.data()[(c * 8 + y) * 8 + x + 1] == fa.data()[(c * 8 + y) * 8 + x]);
        ++compared;
      }
  CHECK(compared == 16 * 6 * 5);

  CHECK_THROWS_AS(det.encoder_forward(Tensor::zeros({16, 16, 1}), params),
                  ad::ContractViolation);
  DetectorConfig bad;
  bad.image_size = 30;
  CHECK_THROWS_AS(Detector{bad}, ad::ContractViolation);
}

TEST_CASE("forward outputs are aligned and proposal selection is deterministic") {
  Detector det(DetectorConfig{});
  std::mt19937_64 rng(9);
  ParameterSet params = det.init(rng);
  const Image im = random_image(rng, 32);
  const std::vector<GroundTruth> gts{{0, {4, 4, 14, 16}}, {2, {18, 10, 30, 20}}};

  DetectorOutput a = det.forward(params, im, &gts);
  DetectorOutput b = det.forward(params, im, &gts);
  CHECK(a.rpn.logits.shape() == ad::Shape{256, 1});
  CHECK(a.rpn.deltas.shape() == ad::Shape{256, 4});
  CHECK(a.proposals.size() <= 16);
  CHECK(a.proposal_rois == a.proposals.size());
  CHECK(a.rois.size() == a.proposals.size() + 2);
  CHECK(a.f_inst.shape() == ad::Shape{a.rois.size(), 128});
  CHECK(a.cls_logits.shape() == ad::Shape{a.rois.size(), 4});
  CHECK(a.box_deltas.shape() == ad::Shape{a.rois.size(), 4});
  CHECK(a.proposal_features().shape() == ad::Shape{a.proposals.size(), 128});
  for (std::size_t i = 1; i < a.proposals.size(); ++i) {
    CHECK(a.proposals[i - 1].score >= a.proposals[i].score);
  }
  REQUIRE(a.proposals.size() == b.proposals.size());
  for (std::size_t i = 0; i < a.proposals.size(); ++i) {
    CHECK(a.proposals[i].box == b.proposals[i].box);
    CHECK(a.proposals[i].score > 0.0);
    CHECK(a.proposals[i].score < 1.0);
  }

  for (const auto& d : det.detect(params, im)) {
    CHECK(d.class_id < 3);
    CHECK(d.box.valid());
    CHECK(d.score >= 1e-3);
    CHECK(d.box.x_max <= 32.0);
  }
}

TEST_CASE("detection loss on a hand-computed instance") {
  DetectorConfig cfg;
  DetectorOutput out;
  out.anchors = {{8, 8, 8, 8}, {12, 8, 8, 8}, {24, 24, 8, 8}, {9, 9, 8, 8}};
  // IoU with the gt: 1, 1/3 (ignored), 0, 0.62.
  out.rpn.logits = Tensor({4, 1}, {1.0, -0.5, -2.0, 0.3});
  out.rpn.deltas = Tensor({4, 4}, {0.1, 0, 0, 0,  //
                                   7, 7, 7, 7,    //
                                   7, 7, 7, 7,    //
                                   -0.125, 0, 0.5, -2});
  out.rois = {{4, 4, 12, 12}, {20, 20, 28, 28}, {4, 4, 12, 12}};
  out.proposal_rois = 2;
  out.cls_logits = Tensor({3, 4}, {0.2, 0.1, 1.5, -0.3,  //
                                   2.0, 0.0, -1.0, 0.5,  //
                                   -0.4, 0.3, 0.9, 0.0});
  out.box_deltas = Tensor({3, 4}, {0.3, -0.2, 0.0, 1.5,  //
                                   9, 9, 9, 9,           //
                                   0.0, 0.05, -0.1, 0.0});
  const std::vector<GroundTruth> gts{{1, {4, 4, 12, 12}}};
  const DetectionLoss loss = detection_loss(out, gts, cfg);
  CHECK(loss.rpn_cls.item() == doctest::Approx(0.33151498100990745).epsilon(1e-12));
  CHECK(loss.rpn_reg.item() == doctest::Approx(0.81890625).epsilon(1e-12));
  CHECK(loss.rcnn_cls.item() == doctest::Approx(0.5549469082558688).epsilon(1e-12));
  CHECK(loss.rcnn_reg.item() == doctest::Approx(0.5356249999999999).epsilon(1e-12));
  CHECK(loss.total.item() == doctest::Approx(2.2409931392657763).epsilon(1e-12));

  SUBCASE("perfect predictions") {
    DetectorOutput p = out;
    p.rpn.logits = Tensor({4, 1}, {60.0, 0.0, -60.0, 60.0});
    p.rpn.deltas = Tensor({4, 4}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, -0.125, -0.125, 0, 0});
    p.cls_logits = Tensor({3, 4}, {0, 0, 60, 0, 60, 0, 0, 0, 0, 0, 60, 0});
    p.box_deltas = Tensor::zeros({3, 4});
    CHECK(detection_loss(p, gts, cfg).total.item() < 1e-20);
  }
  SUBCASE("no positives gives zero regression terms") {
    const DetectionLoss none = detection_loss(out, std::vector<GroundTruth>{}, cfg);
    CHECK(none.rpn_reg.item() == 0.0);
    CHECK(none.rcnn_reg.item() == 0.0);
    CHECK(none.rpn_cls.item() > 0.0);
  }
  SUBCASE("unlabeled samples are rejected") {
    DetectionSample s;
    s.domain = Domain::kTarget;
    CHECK_THROWS_AS(detection_loss(out, s, cfg), ad::ContractViolation);
    s.labels = gts;
    CHECK(detection_loss(out, s, cfg).total.item() == loss.total.item());
  }
}

TEST_CASE("detection loss gradients match finite differences on a 16x16 image") {
  DetectorConfig cfg;
  cfg.image_size = 16;
  cfg.stem_channels = 4;
  cfg.feature_channels = 6;
  cfg.rpn_channels = 6;
  cfg.fc_dim = 8;
  cfg.num_classes = 2;
  Detector det(cfg);
  std::mt19937_64 rng(12);
  ParameterSet params = det.init(rng);
  // Nonzero biases so every bias path is exercised off the relu kinks.
  for (const auto& path : params.paths()) {
    if (path.ends_with("bias")) params.set(path, random_tensor(rng, params.at(path).shape(), 0.1));
  }
  const Image im = random_image(rng, 16);
  const std::vector<GroundTruth> gts{{0, {2, 3, 10, 12}}, {1, {8, 6, 15, 14}}};

  // Proposal boxes are constants of the loss, so they are held fixed.
  auto result = check_gradient(with_frozen_proposals([&](const ParameterSet& p) {
                                 DetectorOutput out = det.forward(p, im, &gts);
                                 return detection_loss(out, gts, cfg).total;
                               }),
                               params);
  CHECK(result.relative_error < 1e-4);
  CHECK(result.analytic.size() == params.size());
}

TEST_CASE("domain names") {
  CHECK(to_string(Domain::kSource) == "source");
  CHECK(domain_from_string("target") == Domain::kTarget);
  CHECK_THROWS_AS(domain_from_string("other"), ad::ContractViolation);
}
