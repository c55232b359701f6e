// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "metauda/bench/dataset_io.hpp"
#include "metauda/bench/synth.hpp"
#include "metauda/autodiff/tensor.hpp"

using namespace metauda;
using namespace metauda::bench;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("metauda_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SplitCounts small_counts() { return {6, 6, 3, 3, 4, 4}; }

std::pair<double, double> pixel_moments(const std::vector<DetectionSample>& samples) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& s : samples)
    for (double v : s.image.pixels) {
      sum += v;
      sq += v * v;
      ++n;
    }
  const double mean = sum / n;
  return {mean, std::sqrt(sq / n - mean * mean)};
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_benchmark({}, small_counts(), 42);
  const auto b = generate_benchmark({}, small_counts(), 42);
  const auto c = generate_benchmark({}, small_counts(), 43);
  CHECK(a.splits == b.splits);
  CHECK(a.target_labels == b.target_labels);
  CHECK(a.splits != c.splits);
}

TEST_CASE("scene invariants") {
  SceneSpec spec;
  const auto b = generate_benchmark(spec, {40, 40, 1, 1, 1, 1}, 5);
  std::set<std::uint64_t> ids;
  for (Split split : kAllSplits) {
    for (const auto& s : b.split(split)) {
      CHECK(ids.insert(s.id).second);
      CHECK(s.domain == split_domain(split));
      CHECK(s.image.width == 32);
      const bool target = s.domain == det::Domain::kTarget;
      CHECK(s.labeled() == !target);
      CHECK(b.target_labels.contains(s.id) == target);
      const auto& objects = target ? b.target_labels.raw().at(s.id) : *s.labels;
      CHECK(objects.size() >= 1);
      CHECK(objects.size() <= 3);
      for (std::size_t i = 0; i < objects.size(); ++i) {
        CHECK(objects[i].box.width() >= 4);
        CHECK(objects[i].box.height() >= 4);
        CHECK(objects[i].class_id < 3);
        for (std::size_t j = i + 1; j < objects.size(); ++j) {
          CHECK(det::iou(objects[i].box, objects[j].box) <= 0.2);
        }
      }
      for (double v : s.image.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::round(v * 255.0) / 255.0 == v);
      }
    }
  }
  CHECK(b.target_labels.access_count() == 0);
}

TEST_CASE("rendered source boxes are tight") {
  const auto b = generate_benchmark({}, {60, 1, 1, 1, 1, 1}, 9);
  // Backgrounds stay under 0.3; object bands start at 0.5.
  auto fg = [](const det::Image& im, std::size_t y, std::size_t x) { return im.at(y, x) > 0.4; };
  for (const auto& s : b.split(Split::kSourceTrain)) {
    for (const auto& o : *s.labels) {
      const auto x0 = std::size_t(o.box.x_min), x1 = std::size_t(o.box.x_max) - 1;
      const auto y0 = std::size_t(o.box.y_min), y1 = std::size_t(o.box.y_max) - 1;
      bool left = false, right = false, top = false, bottom = false;
      for (std::size_t y = y0; y <= y1; ++y) {
        left |= fg(s.image, y, x0);
        right |= fg(s.image, y, x1);
      }
      for (std::size_t x = x0; x <= x1; ++x) {
        top |= fg(s.image, y0, x);
        bottom |= fg(s.image, y1, x);
      }
      CHECK((left && right && top && bottom));
      // Pixels just outside, away from other objects, are background.
      auto free = [&](std::size_t y, std::size_t x) {
        for (const auto& other : *s.labels) {
          if (&other != &o && x >= other.box.x_min && x < other.box.x_max &&
              y >= other.box.y_min && y < other.box.y_max) {
            return false;
          }
        }
        return true;
      };
      const std::size_t cy = (y0 + y1) / 2, cx = (x0 + x1) / 2;
      if (x0 > 0 && free(cy, x0 - 1)) CHECK(!fg(s.image, cy, x0 - 1));
      if (x1 + 1 < 32 && free(cy, x1 + 1)) CHECK(!fg(s.image, cy, x1 + 1));
      if (y0 > 0 && free(y0 - 1, cx)) CHECK(!fg(s.image, y0 - 1, cx));
      if (y1 + 1 < 32 && free(y1 + 1, cx)) CHECK(!fg(s.image, y1 + 1, cx));
    }
  }
}

TEST_CASE("neutral shift keeps pixel statistics, the default shift does not") {
  SceneSpec neutral;
  neutral.shift = DomainShift::none();
  const auto n = generate_benchmark(neutral, {300, 300, 1, 1, 1, 1}, 3);
  const auto [ms, ss] = pixel_moments(n.split(Split::kSourceTrain));
  const auto [mt, st] = pixel_moments(n.split(Split::kTargetTrain));
  CHECK(std::abs(ms - mt) < 0.01);
  CHECK(std::abs(ss - st) < 0.01);

  const auto d = generate_benchmark({}, {300, 300, 1, 1, 1, 1}, 3);
  const auto [md, sd] = pixel_moments(d.split(Split::kTargetTrain));
  CHECK(md - ms > 0.05);  // gamma below 1 lifts the background
  CHECK(sd < ss);

  SceneSpec inverted;
  inverted.shift.invert = true;
  const auto i = generate_benchmark(inverted, {300, 300, 1, 1, 1, 1}, 3);
  CHECK(pixel_moments(i.split(Split::kTargetTrain)).first - ms > 0.4);
}

TEST_CASE("target scenes are drawn independently of source scenes") {
  const auto b = generate_benchmark({}, {20, 20, 1, 1, 1, 1}, 11);
  std::size_t same = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    same += *b.split(Split::kSourceTrain)[i].labels ==
            b.target_labels.raw().at(b.split(Split::kTargetTrain)[i].id);
  }
  CHECK(same < 3);
}

TEST_CASE("sealed labels count reads and copies start fresh") {
  const auto b = generate_benchmark({}, small_counts(), 1);
  const auto& tt = b.split(Split::kTargetTest);
  auto labeled = b.target_labels.unseal(tt);
  CHECK(b.target_labels.access_count() == tt.size());
  for (std::size_t i = 0; i < tt.size(); ++i) {
    CHECK(labeled[i].labeled());
    CHECK(labeled[i].image == tt[i].image);
  }
  SealedLabels copy = b.target_labels;
  CHECK(copy.access_count() == 0);
  CHECK_THROWS_AS(copy.read(12345), ad::ContractViolation);
  const auto q = uda_quartet(b);
  for (const auto& s : q.target_train) CHECK(!s.labeled());
  for (const auto& s : q.target_val) CHECK(!s.labeled());
}

TEST_CASE("impossible placement fails with a diagnostic") {
  SceneSpec spec;
  spec.image_size = 16;
  spec.min_objects = spec.max_objects = 10;
  CHECK_THROWS_AS(generate_benchmark(spec, small_counts(), 1), GenerationError);
  SceneSpec bad;
  bad.num_classes = 4;
  CHECK_THROWS_AS(bad.validate(), ad::ContractViolation);
}

TEST_CASE("export then import reproduces the benchmark") {
  TempDir dir("roundtrip");
  const auto b = generate_benchmark({}, small_counts(), 21);
  export_dataset(b, dir.path);
  const auto back = import_dataset(dir.path);
  CHECK(back.splits == b.splits);
  CHECK(back.target_labels == b.target_labels);
  CHECK(back.seed == 21);
  CHECK(back.spec.shift.gamma == b.spec.shift.gamma);
  CHECK(b.target_labels.access_count() == 0);
}

TEST_CASE("hand-built manifest") {
  TempDir dir("hand");
  det::Image im{32, 32, 1, std::vector<double>(32 * 32, 0.0)};
  im.pixels[5] = 1.0;
  fs::create_directories(dir.path / "img");
  write_png_gray8(dir.path / "img/a.png", im);
  write_png_gray8(dir.path / "img/b.png", im);
  nlohmann::json spec = nlohmann::json::parse(R"({
    "image_size": 32, "min_objects": 1, "max_objects": 3, "num_classes": 3,
    "background_level": 0.2, "texture_amplitude": 0.06, "grain": 0.03,
    "class_intensity": [0.9, 0.72, 0.56], "band_width": 0.05, "max_overlap_iou": 0.2,
    "placement_retries": 64,
    "shift": {"invert": true, "blur_sigma": 1.0, "gamma": 0.7, "noise": 0.02}})");
  nlohmann::json manifest = {
      {"schema", "metauda-dataset"},
      {"version", 1},
      {"seed", 0},
      {"spec", spec},
      {"samples",
       {{{"id", 7}, {"split", "source_train"}, {"domain", "source"}, {"file", "img/a.png"},
         {"objects", {{{"class_id", 2}, {"box", {1, 2, 9, 14}}}, {{"class_id", 0}, {"box", {20, 20, 27.5, 31}}}}}},
        {{"id", 8}, {"split", "target_train"}, {"domain", "target"}, {"file", "img/b.png"}}}}};
  auto write = [&](const nlohmann::json& j) { std::ofstream(dir.path / "manifest.json") << j.dump(); };
  write(manifest);
  const auto b = import_dataset(dir.path);
  const auto& s = b.split(Split::kSourceTrain).at(0);
  REQUIRE(s.labels->size() == 2);
  CHECK((*s.labels)[0] == det::GroundTruth{2, {1, 2, 9, 14}});
  CHECK((*s.labels)[1] == det::GroundTruth{0, {20, 20, 27.5, 31}});
  CHECK(s.image == im);
  CHECK(!b.split(Split::kTargetTrain).at(0).labeled());

  SUBCASE("labels on a target-train sample are leakage") {
    auto leaky = manifest;
    leaky["samples"][1]["objects"] = nlohmann::json::array();
    write(leaky);
    CHECK_THROWS_AS(import_dataset(dir.path), LeakageError);
  }
  SUBCASE("schema violations") {
    auto m = manifest;
    m["samples"][0].erase("split");
    write(m);
    CHECK_THROWS_AS(import_dataset(dir.path), DatasetError);
    m = manifest;
    m["samples"][0]["objects"][0]["box"] = {1, 2, 3};
    write(m);
    CHECK_THROWS_AS(import_dataset(dir.path), DatasetError);
    m = manifest;
    m["samples"][0]["objects"][0]["class_id"] = 5;
    write(m);
    CHECK_THROWS_AS(import_dataset(dir.path), DatasetError);
    m = manifest;
    m["samples"][1]["domain"] = "source";
    write(m);
    CHECK_THROWS_AS(import_dataset(dir.path), DatasetError);
    m = manifest;
    m["samples"][1]["file"] = "../escape.png";
    write(m);
    CHECK_THROWS_AS(import_dataset(dir.path), DatasetError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(import_dataset(dir.path / "nope"), DatasetError);
  }
}
