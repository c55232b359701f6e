// SPDX-License-Identifier: Apache-2.0

#include "metauda/bench/dataset_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "metauda/autodiff/tensor.hpp"

namespace metauda::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;
constexpr const char* kSchemaName = "metauda-dataset";

json objects_to_json(const std::vector<GroundTruth>& objects) {
  json arr = json::array();
  for (const auto& o : objects) {
    arr.push_back({{"class_id", o.class_id},
                   {"box", {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max}}});
  }
  return arr;
}

std::vector<GroundTruth> objects_from_json(const json& arr, const SceneSpec& spec,
                                           const std::string& where) {
  if (!arr.is_array()) throw DatasetError(where + ": 'objects' must be an array");
  std::vector<GroundTruth> out;
  for (const auto& o : arr) {
    if (!o.is_object() || !o.contains("class_id") || !o.contains("box")) {
      throw DatasetError(where + ": object needs 'class_id' and 'box'");
    }
    if (!o["class_id"].is_number_unsigned()) {
      throw DatasetError(where + ": class_id must be a non-negative integer");
    }
    const auto cls = o["class_id"].get<std::size_t>();
    if (cls >= spec.num_classes) {
      throw DatasetError(where + ": class_id " + std::to_string(cls) + " out of range");
    }
    const json& b = o["box"];
    if (!b.is_array() || b.size() != 4 ||
        !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
      throw DatasetError(where + ": box must be [x_min, y_min, x_max, y_max]");
    }
    det::Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    const double s = static_cast<double>(spec.image_size);
    if (!box.valid() || box.x_min < 0 || box.y_min < 0 || box.x_max > s || box.y_max > s) {
      throw DatasetError(where + ": box outside the image or empty");
    }
    out.push_back({cls, box});
  }
  return out;
}

json spec_to_json(const SceneSpec& s) {
  return {{"image_size", s.image_size},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"num_classes", s.num_classes},
          {"background_level", s.background_level},
          {"texture_amplitude", s.texture_amplitude},
          {"grain", s.grain},
          {"class_intensity", s.class_intensity},
          {"band_width", s.band_width},
          {"max_overlap_iou", s.max_overlap_iou},
          {"placement_retries", s.placement_retries},
          {"shift",
           {{"invert", s.shift.invert},
            {"blur_sigma", s.shift.blur_sigma},
            {"gamma", s.shift.gamma},
            {"noise", s.shift.noise}}}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  try {
    s.image_size = j.at("image_size").get<std::size_t>();
    s.min_objects = j.at("min_objects").get<std::size_t>();
    s.max_objects = j.at("max_objects").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.background_level = j.at("background_level").get<double>();
    s.texture_amplitude = j.at("texture_amplitude").get<double>();
    s.grain = j.at("grain").get<double>();
    s.class_intensity = j.at("class_intensity").get<std::array<double, 3>>();
    s.band_width = j.at("band_width").get<double>();
    s.max_overlap_iou = j.at("max_overlap_iou").get<double>();
    s.placement_retries = j.at("placement_retries").get<std::size_t>();
    const json& sh = j.at("shift");
    s.shift = {sh.at("invert").get<bool>(), sh.at("blur_sigma").get<double>(),
               sh.at("gamma").get<double>(), sh.at("noise").get<double>()};
  } catch (const json::exception& e) {
    throw DatasetError(std::string("manifest: bad 'spec': ") + e.what());
  }
  try {
    s.validate();
  } catch (const ad::ContractViolation& e) {
    throw DatasetError(std::string("manifest: ") + e.what());
  }
  return s;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw DatasetError("write failed for " + path.string());
}

std::string image_name(const DetectionSample& s, Split split) {
  return "images/" + to_string(split) + "/" + std::to_string(s.id) + ".png";
}

}  // namespace

void write_png_gray8(const fs::path& path, const det::Image& image) {
  if (image.channels != 1) throw DatasetError("png: only single-channel images are written");
  std::vector<png_byte> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DatasetError("png write " + path.string() + ": " + msg);
  }
}

det::Image read_png_gray8(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw DatasetError("png read " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DatasetError("png read " + path.string() + ": " + msg);
  }
  det::Image image{png.height, png.width, 1, std::vector<double>(bytes.size())};
  for (std::size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = bytes[i] / 255.0;
  return image;
}

void export_dataset(const Benchmark& benchmark, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
  json samples = json::array();
  json sealed = json::array();
  for (Split split : kAllSplits) {
    fs::create_directories(dir / "images" / to_string(split), ec);
    if (ec) throw DatasetError("cannot create image directory: " + ec.message());
    for (const auto& s : benchmark.split(split)) {
      const std::string file = image_name(s, split);
      write_png_gray8(dir / file, s.image);
      json entry = {{"id", s.id},
                    {"split", to_string(split)},
                    {"domain", det::to_string(s.domain)},
                    {"file", file}};
      if (s.domain == det::Domain::kSource) {
        if (!s.labeled()) throw DatasetError("source sample " + std::to_string(s.id) + " unlabeled");
        entry["objects"] = objects_to_json(*s.labels);
      } else if (s.labeled()) {
        throw LeakageError("export: target sample " + std::to_string(s.id) + " carries labels");
      }
      samples.push_back(std::move(entry));
    }
  }
  for (const auto& [id, objects] : benchmark.target_labels.raw()) {
    sealed.push_back({{"id", id}, {"objects", objects_to_json(objects)}});
  }
  write_json(dir / "manifest.json", {{"schema", kSchemaName},
                                     {"version", kSchemaVersion},
                                     {"seed", benchmark.seed},
                                     {"spec", spec_to_json(benchmark.spec)},
                                     {"samples", samples}});
  write_json(dir / "sealed_labels.json",
             {{"schema", kSchemaName}, {"version", kSchemaVersion}, {"labels", sealed}});
}

Benchmark import_dataset(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.is_object() || manifest.value("schema", "") != kSchemaName) {
    throw DatasetError("manifest: not a " + std::string(kSchemaName) + " manifest");
  }
  if (manifest.value("version", -1) != kSchemaVersion) {
    throw DatasetError("manifest: unsupported version");
  }
  if (!manifest.contains("samples") || !manifest["samples"].is_array() ||
      !manifest.contains("spec")) {
    throw DatasetError("manifest: needs 'spec' and a 'samples' array");
  }
  Benchmark b;
  b.spec = spec_from_json(manifest["spec"]);
  b.seed = manifest.value("seed", std::uint64_t{0});
  std::set<std::uint64_t> ids;
  std::set<std::uint64_t> target_ids;
  for (const auto& e : manifest["samples"]) {
    if (!e.is_object() || !e.contains("id") || !e.contains("split") || !e.contains("domain") ||
        !e.contains("file") || !e["id"].is_number_unsigned() || !e["split"].is_string() ||
        !e["domain"].is_string() || !e["file"].is_string()) {
      throw DatasetError("manifest: sample entries need id, split, domain and file");
    }
    DetectionSample s;
    s.id = e["id"].get<std::uint64_t>();
    const std::string where = "manifest sample " + std::to_string(s.id);
    if (!ids.insert(s.id).second) throw DatasetError(where + ": duplicate id");
    Split split;
    try {
      split = split_from_string(e["split"].get<std::string>());
      s.domain = det::domain_from_string(e["domain"].get<std::string>());
    } catch (const ad::ContractViolation& err) {
      throw DatasetError(where + ": " + err.what());
    }
    if (s.domain != split_domain(split)) throw DatasetError(where + ": domain does not match split");
    if (s.domain == det::Domain::kTarget) {
      if (e.contains("objects")) {
        throw LeakageError(where + ": labels on a " + to_string(split) +
                           " sample (target labels belong in sealed_labels.json)");
      }
      target_ids.insert(s.id);
    } else {
      if (!e.contains("objects")) throw DatasetError(where + ": source sample without 'objects'");
      s.labels = objects_from_json(e["objects"], b.spec, where);
    }
    const fs::path file = e["file"].get<std::string>();
    if (file.is_absolute() || file.lexically_normal().string().starts_with("..")) {
      throw DatasetError(where + ": image path must stay inside the dataset directory");
    }
    s.image = read_png_gray8(dir / file);
    if (s.image.width != b.spec.image_size || s.image.height != b.spec.image_size) {
      throw DatasetError(where + ": image size does not match the spec");
    }
    b.split(split).push_back(std::move(s));
  }

  const fs::path sealed_path = dir / "sealed_labels.json";
  if (fs::exists(sealed_path)) {
    const json sealed = read_json(sealed_path);
    if (!sealed.is_object() || !sealed.contains("labels") || !sealed["labels"].is_array()) {
      throw DatasetError("sealed_labels.json: needs a 'labels' array");
    }
    for (const auto& e : sealed["labels"]) {
      if (!e.is_object() || !e.contains("id") || !e["id"].is_number_unsigned() ||
          !e.contains("objects")) {
        throw DatasetError("sealed_labels.json: entries need id and objects");
      }
      const auto id = e["id"].get<std::uint64_t>();
      if (!target_ids.count(id)) {
        throw DatasetError("sealed_labels.json: id " + std::to_string(id) +
                           " is not a target sample");
      }
      b.target_labels.seal(id, objects_from_json(e["objects"], b.spec,
                                                 "sealed label " + std::to_string(id)));
    }
  }
  return b;
}

}  // namespace metauda::bench
