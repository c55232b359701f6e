// SPDX-License-Identifier: Apache-2.0

#include "metauda/harness/report.hpp"

#include <cstdio>

namespace metauda::harness {

using nlohmann::json;

namespace {

constexpr const char* kSchemaName = "metauda-report";

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ReportError(std::string("report: field '") + key + "': " + e.what());
  }
}

json losses_json(const EpochLoss& e) {
  json j = {{"phase", e.phase}, {"epoch", e.epoch}, {"steps", e.steps}, {"det", e.det},
            {"img", e.img},     {"inst", e.inst},   {"da", e.da},       {"uda", e.uda}};
  j["meta_loss"] = e.meta_loss ? json(*e.meta_loss) : json(nullptr);
  return j;
}

}  // namespace

bool EvalReport::operator==(const EvalReport& o) const {
  return config_hash == o.config_hash && mode == o.mode && seed == o.seed && data_seed == o.data_seed &&
         source_test == o.source_test && target_test == o.target_test &&
         target_test_before_finetune == o.target_test_before_finetune && loss_curve == o.loss_curve &&
         updates == o.updates && source_reads == o.source_reads && target_reads == o.target_reads &&
         sealed_label_reads_in_training == o.sealed_label_reads_in_training && peak_records == o.peak_records;
}

json to_json(const MapResult& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    json curve = json::array();
    for (const auto& p : c.curve) curve.push_back({p.recall, p.precision, p.score});
    classes.push_back({{"class_id", c.class_id},
                       {"num_gt", c.num_gt},
                       {"num_detections", c.num_detections},
                       {"ap", c.ap},
                       {"pr_curve", curve}});
  }
  return {{"ap_variant", to_string(r.variant)}, {"iou_threshold", r.iou_threshold}, {"map", r.map},
          {"classes", classes}};
}

MapResult map_result_from_json(const json& j) {
  MapResult r;
  try {
    r.variant = ap_variant_from_string(field<std::string>(j, "ap_variant"));
  } catch (const ad::ContractViolation& e) {
    throw ReportError(e.what());
  }
  r.iou_threshold = field<double>(j, "iou_threshold");
  r.map = field<double>(j, "map");
  for (const auto& c : field<json>(j, "classes")) {
    ClassAp ap;
    ap.class_id = field<std::size_t>(c, "class_id");
    ap.num_gt = field<std::size_t>(c, "num_gt");
    ap.num_detections = field<std::size_t>(c, "num_detections");
    ap.ap = field<double>(c, "ap");
    for (const auto& p : field<json>(c, "pr_curve")) {
      if (!p.is_array() || p.size() != 3) throw ReportError("report: pr_curve points are [recall, precision, score]");
      ap.curve.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    r.classes.push_back(std::move(ap));
  }
  return r;
}

json to_json(const EvalReport& r) {
  json curve = json::array();
  for (const auto& e : r.loss_curve) curve.push_back(losses_json(e));
  json j = {{"schema", kSchemaName},
            {"version", EvalReport::kVersion},
            {"config_hash", r.config_hash},
            {"mode", r.mode},
            {"seed", r.seed},
            {"data_seed", r.data_seed},
            {"source_test", to_json(r.source_test)},
            {"target_test", to_json(r.target_test)},
            {"loss_curve", curve},
            {"updates", r.updates},
            {"reads", {{"source", r.source_reads}, {"target", r.target_reads}}},
            {"sealed_label_reads_in_training", r.sealed_label_reads_in_training},
            {"peak_records", r.peak_records},
            {"wall_time_s", r.wall_time_s}};
  j["target_test_before_finetune"] =
      r.target_test_before_finetune ? to_json(*r.target_test_before_finetune) : json(nullptr);
  return j;
}

EvalReport report_from_json(const json& j) {
  if (!j.is_object() || j.value("schema", "") != kSchemaName) throw ReportError("report: not a report");
  if (j.value("version", -1) != EvalReport::kVersion) throw ReportError("report: unsupported version");
  EvalReport r;
  r.config_hash = field<std::string>(j, "config_hash");
  r.mode = field<std::string>(j, "mode");
  r.seed = field<std::uint64_t>(j, "seed");
  r.data_seed = field<std::uint64_t>(j, "data_seed");
  r.source_test = map_result_from_json(field<json>(j, "source_test"));
  r.target_test = map_result_from_json(field<json>(j, "target_test"));
  const json pre = field<json>(j, "target_test_before_finetune");
  if (!pre.is_null()) r.target_test_before_finetune = map_result_from_json(pre);
  for (const auto& e : field<json>(j, "loss_curve")) {
    EpochLoss l;
    l.phase = field<std::string>(e, "phase");
    l.epoch = field<std::uint64_t>(e, "epoch");
    l.steps = field<std::uint64_t>(e, "steps");
    l.det = field<double>(e, "det");
    l.img = field<double>(e, "img");
    l.inst = field<double>(e, "inst");
    l.da = field<double>(e, "da");
    l.uda = field<double>(e, "uda");
    const json ml = field<json>(e, "meta_loss");
    if (!ml.is_null()) l.meta_loss = ml.get<double>();
    r.loss_curve.push_back(l);
  }
  r.updates = field<std::uint64_t>(j, "updates");
  const json reads = field<json>(j, "reads");
  r.source_reads = field<std::uint64_t>(reads, "source");
  r.target_reads = field<std::uint64_t>(reads, "target");
  r.sealed_label_reads_in_training = field<std::uint64_t>(j, "sealed_label_reads_in_training");
  r.peak_records = field<int>(j, "peak_records");
  r.wall_time_s = field<double>(j, "wall_time_s");
  return r;
}

std::vector<EpochLoss> epoch_means(const std::vector<train::LossRow>& log, std::size_t meta_epoch_size,
                                   std::size_t main_epoch_size) {
  std::vector<EpochLoss> out;
  for (const auto& row : log) {
    const bool meta = row.phase == train::Phase::kMeta;
    const std::size_t size = std::max<std::size_t>(1, meta ? meta_epoch_size : main_epoch_size);
    const std::string phase = train::to_string(row.phase);
    const std::uint64_t epoch = row.step / size;
    if (out.empty() || out.back().phase != phase || out.back().epoch != epoch) {
      out.push_back({phase, epoch, 0, 0.0, 0.0, 0.0, 0.0, 0.0, std::nullopt});
      if (row.meta_loss) out.back().meta_loss = 0.0;
    }
    auto& e = out.back();
    ++e.steps;
    e.det += row.det;
    e.img += row.img;
    e.inst += row.inst;
    e.da += row.da;
    e.uda += row.uda;
    if (row.meta_loss) e.meta_loss = e.meta_loss.value_or(0.0) + *row.meta_loss;
  }
  for (auto& e : out) {
    const double n = static_cast<double>(e.steps);
    e.det /= n;
    e.img /= n;
    e.inst /= n;
    e.da /= n;
    e.uda /= n;
    if (e.meta_loss) *e.meta_loss /= n;
  }
  return out;
}

std::string loss_csv(const std::vector<train::LossRow>& log) {
  std::string out = "phase,step,L_det,L_img,L_inst,L_da,L_uda,meta_loss\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,", train::to_string(r.phase).c_str(),
                  static_cast<unsigned long long>(r.step), r.det, r.img, r.inst, r.da, r.uda);
    out += buf;
    if (r.meta_loss) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.meta_loss);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace metauda::harness
