// SPDX-License-Identifier: Apache-2.0

#include "metauda/bench/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "metauda/autodiff/tensor.hpp"

namespace metauda::bench {

using ad::ContractViolation;
using det::Box;
using det::Image;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void SceneSpec::validate() const {
  if (image_size < 16) throw ContractViolation("scene: image size must be at least 16");
  if (min_objects == 0 || min_objects > max_objects) {
    throw ContractViolation("scene: object count range must satisfy 1 <= min <= max");
  }
  if (num_classes == 0 || num_classes > 3) {
    throw ContractViolation("scene: between 1 and 3 classes (disk, square, bar)");
  }
  if (!(max_overlap_iou >= 0.0 && max_overlap_iou <= 0.2)) {
    throw ContractViolation("scene: max_overlap_iou must be in [0, 0.2]");
  }
  if (!(shift.blur_sigma >= 0.0) || !(shift.gamma > 0.0) || !(shift.noise >= 0.0)) {
    throw ContractViolation("scene: shift needs blur >= 0, gamma > 0, noise >= 0");
  }
  if (placement_retries == 0) throw ContractViolation("scene: placement_retries must be > 0");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kSourceTrain: return "source_train";
    case Split::kTargetTrain: return "target_train";
    case Split::kSourceVal: return "source_val";
    case Split::kTargetVal: return "target_val";
    case Split::kSourceTest: return "source_test";
    case Split::kTargetTest: return "target_test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  for (Split s : kAllSplits) {
    if (to_string(s) == name) return s;
  }
  throw ContractViolation("unknown split '" + name + "'");
}

det::Domain split_domain(Split split) {
  switch (split) {
    case Split::kSourceTrain:
    case Split::kSourceVal:
    case Split::kSourceTest:
      return det::Domain::kSource;
    default:
      return det::Domain::kTarget;
  }
}

SealedLabels::SealedLabels(const SealedLabels& other) : labels_(other.labels_) {}

SealedLabels& SealedLabels::operator=(const SealedLabels& other) {
  labels_ = other.labels_;
  reads_ = std::make_unique<std::atomic<std::uint64_t>>(0);
  return *this;
}

void SealedLabels::seal(std::uint64_t id, std::vector<GroundTruth> labels) {
  if (!labels_.emplace(id, std::move(labels)).second) {
    throw ContractViolation("sealed labels: duplicate id " + std::to_string(id));
  }
}

const std::vector<GroundTruth>& SealedLabels::read(std::uint64_t id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) {
    throw ContractViolation("sealed labels: no labels for sample " + std::to_string(id));
  }
  reads_->fetch_add(1);
  return it->second;
}

std::vector<DetectionSample> SealedLabels::unseal(std::span<const DetectionSample> samples) const {
  std::vector<DetectionSample> out(samples.begin(), samples.end());
  for (auto& s : out) s.labels = read(s.id);
  return out;
}

SplitQuartet uda_quartet(const Benchmark& b) {
  return {b.split(Split::kSourceTrain), b.split(Split::kTargetTrain), b.split(Split::kSourceVal),
          b.split(Split::kTargetVal)};
}

std::uint64_t sample_id(Split split, std::size_t index) {
  return (static_cast<std::uint64_t>(split) + 1) * 1000000ULL + index;
}

void quantize(Image& image) {
  for (auto& v : image.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

namespace {

enum class Shape { kDisk = 0, kSquare = 1, kBar = 2 };

struct Placed {
  Shape shape;
  std::size_t class_id;
  int x0, y0, w, h;  // placement box
  double intensity;
};

bool inside(const Placed& p, int x, int y) {
  const double px = x + 0.5, py = y + 0.5;
  if (p.shape == Shape::kDisk) {
    const double r = 0.5 * p.w;
    const double cx = p.x0 + r, cy = p.y0 + r;
    return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
  }
  return x >= p.x0 && x < p.x0 + p.w && y >= p.y0 && y < p.y0 + p.h;
}

}  // namespace

Scene render_scene(const SceneSpec& spec, std::uint64_t stream_seed) {
  std::mt19937_64 rng(stream_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int s = static_cast<int>(spec.image_size);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const std::size_t n = static_cast<std::size_t>(
      uniform_int(static_cast<int>(spec.min_objects), static_cast<int>(spec.max_objects)));
  std::vector<Placed> placed;
  for (std::size_t k = 0; k < n; ++k) {
    bool ok = false;
    for (std::size_t attempt = 0; attempt < spec.placement_retries && !ok; ++attempt) {
      Placed p;
      p.class_id = static_cast<std::size_t>(uniform_int(0, static_cast<int>(spec.num_classes) - 1));
      p.shape = static_cast<Shape>(p.class_id);
      switch (p.shape) {
        case Shape::kDisk:
          p.w = p.h = uniform_int(7, 12);
          break;
        case Shape::kSquare:
          p.w = p.h = uniform_int(6, 11);
          break;
        case Shape::kBar: {
          const int len = uniform_int(11, 16), thick = uniform_int(4, 5);
          if (unit(rng) < 0.5) {
            p.w = len;
            p.h = thick;
          } else {
            p.w = thick;
            p.h = len;
          }
          break;
        }
      }
      if (p.w > s || p.h > s) continue;
      p.x0 = uniform_int(0, s - p.w);
      p.y0 = uniform_int(0, s - p.h);
      p.intensity = spec.class_intensity[p.class_id] + spec.band_width * (2.0 * unit(rng) - 1.0);
      const Box b{double(p.x0), double(p.y0), double(p.x0 + p.w), double(p.y0 + p.h)};
      // Disjoint boxes keep every object's pixels visible, so rendered boxes stay tight.
      ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& q) {
        const Box c{double(q.x0), double(q.y0), double(q.x0 + q.w), double(q.y0 + q.h)};
        return det::iou(b, c) > 0.0;
      });
      if (ok) placed.push_back(p);
    }
    if (!ok) {
      throw GenerationError("scene generation: could not place object " + std::to_string(k + 1) +
                            " of " + std::to_string(n) + " without overlap after " +
                            std::to_string(spec.placement_retries) + " attempts (image " +
                            std::to_string(s) + "px)");
    }
  }

  Scene scene;
  scene.image = {spec.image_size, spec.image_size, 1, std::vector<double>(spec.image_size * spec.image_size)};
  const double fx = 2.0 * std::numbers::pi / (6.0 + 10.0 * unit(rng));
  const double fy = 2.0 * std::numbers::pi / (6.0 + 10.0 * unit(rng));
  const double phx = 2.0 * std::numbers::pi * unit(rng), phy = 2.0 * std::numbers::pi * unit(rng);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      scene.image.pixels[y * s + x] = spec.background_level +
                                      spec.texture_amplitude * std::sin(fx * x + phx) * std::sin(fy * y + phy) +
                                      spec.grain * (2.0 * unit(rng) - 1.0);
    }
  }
  for (const auto& p : placed) {
    int x_min = s, y_min = s, x_max = -1, y_max = -1;
    for (int y = p.y0; y < p.y0 + p.h; ++y) {
      for (int x = p.x0; x < p.x0 + p.w; ++x) {
        if (!inside(p, x, y)) continue;
        scene.image.pixels[y * s + x] = p.intensity + 0.5 * spec.grain * (2.0 * unit(rng) - 1.0);
        x_min = std::min(x_min, x);
        y_min = std::min(y_min, y);
        x_max = std::max(x_max, x);
        y_max = std::max(y_max, y);
      }
    }
    scene.objects.push_back(
        {p.class_id, Box{double(x_min), double(y_min), double(x_max + 1), double(y_max + 1)}});
  }
  quantize(scene.image);
  return scene;
}

Image apply_shift(const Image& image, const DomainShift& shift, std::uint64_t noise_seed) {
  Image out = image;
  const std::size_t h = image.height, w = image.width;
  if (shift.invert) {
    for (auto& v : out.pixels) v = 1.0 - v;
  }
  if (shift.blur_sigma > 0.0) {
    const int radius = static_cast<int>(std::ceil(3.0 * shift.blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[i + radius] = std::exp(-0.5 * i * i / (shift.blur_sigma * shift.blur_sigma));
      total += kernel[i + radius];
    }
    for (auto& k : kernel) k /= total;
    auto clamp_index = [](long i, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(n) - 1));
    };
    std::vector<double> tmp(out.pixels.size());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * out.pixels[y * w + clamp_index(long(x) + i, w)];
        }
        tmp[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * tmp[clamp_index(long(y) + i, h) * w + x];
        }
        out.pixels[y * w + x] = acc;
      }
  }
  if (shift.gamma != 1.0) {
    for (auto& v : out.pixels) v = std::pow(std::clamp(v, 0.0, 1.0), shift.gamma);
  }
  if (shift.noise > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> n(0.0, shift.noise);
    for (auto& v : out.pixels) v += n(rng);
  }
  quantize(out);
  return out;
}

Benchmark generate_benchmark(const SceneSpec& spec, const SplitCounts& counts, std::uint64_t seed) {
  spec.validate();
  const std::array<std::size_t, 6> sizes{counts.source_train, counts.target_train,
                                         counts.source_val,   counts.target_val,
                                         counts.source_test,  counts.target_test};
  if (std::any_of(sizes.begin(), sizes.end(), [](std::size_t n) { return n == 0; })) {
    throw ContractViolation("benchmark: every split count must be positive");
  }
  Benchmark b;
  b.spec = spec;
  b.seed = seed;
  for (Split split : kAllSplits) {
    const std::size_t count = sizes[static_cast<std::size_t>(split)];
    auto& out = b.split(split);
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t id = sample_id(split, i);
      const std::uint64_t stream = splitmix64(seed ^ splitmix64(id));
      Scene scene = render_scene(spec, stream);
      DetectionSample sample;
      sample.id = id;
      sample.domain = split_domain(split);
      if (sample.domain == det::Domain::kSource) {
        sample.image = std::move(scene.image);
        sample.labels = std::move(scene.objects);
      } else {
        sample.image = apply_shift(scene.image, spec.shift, splitmix64(stream));
        b.target_labels.seal(id, std::move(scene.objects));
      }
      out.push_back(std::move(sample));
    }
  }
  return b;
}

}  // namespace metauda::bench
