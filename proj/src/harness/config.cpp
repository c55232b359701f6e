// SPDX-License-Identifier: Apache-2.0

#include "metauda/harness/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace metauda::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename F>
auto wrap_enum(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ad::ContractViolation& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto uint_field = [&](const std::string& key, auto getter) {
      f.push_back({key, [getter](const ExperimentConfig& c) { return std::to_string(*getter(const_cast<ExperimentConfig&>(c))); },
                   [key, getter](ExperimentConfig& c, const std::string& v) {
                     *getter(c) = static_cast<std::remove_reference_t<decltype(*getter(c))>>(parse_uint(key, v));
                   }});
    };
    auto real_field = [&](const std::string& key, auto getter) {
      f.push_back({key, [getter](const ExperimentConfig& c) { return fmt(*getter(const_cast<ExperimentConfig&>(c))); },
                   [key, getter](ExperimentConfig& c, const std::string& v) { *getter(c) = parse_double(key, v); }});
    };

    // Run
    f.push_back({"mode", [](const ExperimentConfig& c) { return train::to_string(c.mode); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.mode = wrap_enum("mode", [&] { return train::run_mode_from_string(v); });
                 }});
    f.push_back({"seeds",
                 [](const ExperimentConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
                   return s;
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.seeds.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) c.seeds.push_back(parse_uint("seeds", trim(item)));
                 }});
    f.push_back({"out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
                 [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }});
    f.push_back({"ap_variant", [](const ExperimentConfig& c) { return to_string(c.ap_variant); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.ap_variant = wrap_enum("ap_variant", [&] { return ap_variant_from_string(v); });
                 }});
    real_field("iou_threshold", [](ExperimentConfig& c) { return &c.iou_threshold; });

    // Meta-adaptation
    real_field("alpha", [](ExperimentConfig& c) { return &c.trainer.alpha; });
    real_field("beta", [](ExperimentConfig& c) { return &c.trainer.beta; });
    uint_field("m", [](ExperimentConfig& c) { return &c.trainer.m; });
    f.push_back({"meta_mode", [](const ExperimentConfig& c) { return train::to_string(c.trainer.meta_mode); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.trainer.meta_mode = wrap_enum("meta_mode", [&] { return train::meta_mode_from_string(v); });
                 }});
    f.push_back({"inner_style", [](const ExperimentConfig& c) { return train::to_string(c.trainer.inner_style); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.trainer.inner_style = wrap_enum("inner_style", [&] { return train::inner_style_from_string(v); });
                 }});
    uint_field("meta_epochs", [](ExperimentConfig& c) { return &c.trainer.meta_epochs; });

    // Single-level loop
    uint_field("epochs", [](ExperimentConfig& c) { return &c.trainer.epochs; });
    real_field("lr", [](ExperimentConfig& c) { return &c.trainer.lr; });
    real_field("momentum", [](ExperimentConfig& c) { return &c.trainer.momentum; });
    real_field("lr_decay", [](ExperimentConfig& c) { return &c.trainer.lr_decay; });

    // Adaptation loss
    real_field("lambda", [](ExperimentConfig& c) { return &c.trainer.lambda; });
    real_field("grl_weight", [](ExperimentConfig& c) { return &c.trainer.alignment.grl_weight; });
    uint_field("image_disc_width", [](ExperimentConfig& c) { return &c.trainer.alignment.image_disc_width; });
    uint_field("inst_disc_width", [](ExperimentConfig& c) { return &c.trainer.alignment.inst_disc_width; });
    real_field("inst_keep", [](ExperimentConfig& c) { return &c.trainer.alignment.inst_keep; });

    // Detector
    uint_field("stem_channels", [](ExperimentConfig& c) { return &c.trainer.detector.stem_channels; });
    uint_field("feature_channels", [](ExperimentConfig& c) { return &c.trainer.detector.feature_channels; });
    uint_field("rpn_channels", [](ExperimentConfig& c) { return &c.trainer.detector.rpn_channels; });
    uint_field("fc_dim", [](ExperimentConfig& c) { return &c.trainer.detector.fc_dim; });
    uint_field("max_proposals", [](ExperimentConfig& c) { return &c.trainer.detector.max_proposals; });

    // Data
    uint_field("data_seed", [](ExperimentConfig& c) { return &c.data_seed; });
    f.push_back({"data_dir", [](const ExperimentConfig& c) { return c.data_dir; },
                 [](ExperimentConfig& c, const std::string& v) { c.data_dir = v; }});
    uint_field("image_size", [](ExperimentConfig& c) { return &c.scene.image_size; });
    uint_field("min_objects", [](ExperimentConfig& c) { return &c.scene.min_objects; });
    uint_field("max_objects", [](ExperimentConfig& c) { return &c.scene.max_objects; });
    real_field("background_level", [](ExperimentConfig& c) { return &c.scene.background_level; });
    real_field("texture_amplitude", [](ExperimentConfig& c) { return &c.scene.texture_amplitude; });
    real_field("grain", [](ExperimentConfig& c) { return &c.scene.grain; });
    f.push_back({"shift_invert", [](const ExperimentConfig& c) { return std::string(c.scene.shift.invert ? "true" : "false"); },
                 [](ExperimentConfig& c, const std::string& v) { c.scene.shift.invert = parse_bool("shift_invert", v); }});
    real_field("shift_blur_sigma", [](ExperimentConfig& c) { return &c.scene.shift.blur_sigma; });
    real_field("shift_gamma", [](ExperimentConfig& c) { return &c.scene.shift.gamma; });
    real_field("shift_noise", [](ExperimentConfig& c) { return &c.scene.shift.noise; });
    uint_field("n_source_train", [](ExperimentConfig& c) { return &c.counts.source_train; });
    uint_field("n_target_train", [](ExperimentConfig& c) { return &c.counts.target_train; });
    uint_field("n_source_val", [](ExperimentConfig& c) { return &c.counts.source_val; });
    uint_field("n_target_val", [](ExperimentConfig& c) { return &c.counts.target_val; });
    uint_field("n_source_test", [](ExperimentConfig& c) { return &c.counts.source_test; });
    uint_field("n_target_test", [](ExperimentConfig& c) { return &c.counts.target_test; });
    return f;
  }();
  return fields;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    trainer.validate();
    scene.validate();
  } catch (const ad::ContractViolation& e) {
    throw ConfigError(e.what());
  }
  if (trainer.detector.image_size != scene.image_size) {
    throw ConfigError("image_size: detector and scene disagree");
  }
  if (trainer.detector.num_classes != scene.num_classes) {
    throw ConfigError("num_classes: detector and scene disagree");
  }
  for (std::size_t n : {counts.source_train, counts.target_train, counts.source_val, counts.target_val,
                        counts.source_test, counts.target_test}) {
    if (n == 0) throw ConfigError("split sizes must be positive");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicates");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("iou_threshold must lie in (0, 1]");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : schema()) out.push_back(f.key);
  return out;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : schema()) {
    if (f.key == key) {
      f.set(config, value);
      if (key == "image_size") config.trainer.detector.image_size = config.scene.image_size;
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : schema()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& f : schema()) {
    if (f.key == "out_dir") continue;
    for (unsigned char ch : f.key + "=" + f.get(config) + "\n") h = (h ^ ch) * 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace metauda::harness
