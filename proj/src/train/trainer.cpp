// SPDX-License-Identifier: Apache-2.0

#include "metauda/train/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "metauda/autodiff/ops.hpp"
#include "metauda/util/log.hpp"

namespace metauda::train {

using ad::ContractViolation;

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kSourceOnly: return "source-only";
    case RunMode::kDa: return "da";
    case RunMode::kMetaDa: return "meta-da";
    case RunMode::kOracle: return "oracle";
  }
  return "?";
}

RunMode run_mode_from_string(const std::string& name) {
  for (RunMode m : {RunMode::kSourceOnly, RunMode::kDa, RunMode::kMetaDa, RunMode::kOracle}) {
    if (to_string(m) == name) return m;
  }
  throw ContractViolation("unknown mode '" + name + "' (source-only|da|meta-da|oracle)");
}

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::kMeta: return "meta";
    case Phase::kMain: return "main";
    case Phase::kDone: return "done";
  }
  return "?";
}

void TrainerConfig::validate() const {
  detector.validate();
  alignment.validate();
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!finite_nonneg(lambda)) throw ContractViolation("config: lambda must be >= 0");
  if (!(std::isfinite(lr) && lr > 0.0)) throw ContractViolation("config: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractViolation("config: momentum must lie in [0, 1)");
  if (!(std::isfinite(alpha) && alpha > 0.0)) throw ContractViolation("config: alpha must be > 0");
  if (!finite_nonneg(beta)) throw ContractViolation("config: beta must be >= 0");
  if (m < 1) throw ContractViolation("config: m must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ContractViolation("config: lr_decay must lie in (0, 1]");
}

namespace {

const char* kSourceTrain = "source_train";
const char* kTargetTrain = "target_train";
const char* kMetaSourceTrain = "meta/source_train";
const char* kMetaTargetTrain = "meta/target_train";
const char* kMetaSourceVal = "meta/source_val";
const char* kMetaTargetVal = "meta/target_val";

std::vector<std::string> stream_names(RunMode mode) {
  switch (mode) {
    case RunMode::kSourceOnly: return {kSourceTrain};
    case RunMode::kDa: return {kSourceTrain, kTargetTrain};
    case RunMode::kMetaDa:
      return {kSourceTrain, kTargetTrain, kMetaSourceTrain, kMetaTargetTrain, kMetaSourceVal,
              kMetaTargetVal};
    case RunMode::kOracle: return {kTargetTrain};
  }
  return {};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.paths() != b.paths()) return false;
  for (const auto& [path, t] : a) {
    if (!bitwise_equal(t, b.at(path))) return false;
  }
  return true;
}

ParameterSet zeros_like(const ParameterSet& p) {
  ParameterSet out;
  for (const auto& [path, t] : p) out.insert(path, Tensor::zeros(t.shape()));
  return out;
}

}  // namespace

std::uint64_t TrainerState::reads(det::Domain domain) const {
  const std::string tag = det::to_string(domain);
  std::uint64_t n = 0;
  for (const auto& [name, s] : streams) {
    if (name.find(tag) != std::string::npos) n += s.reads;
  }
  return n;
}

bool same_state(const TrainerState& a, const TrainerState& b) {
  if (a.mode != b.mode || a.phase != b.phase || a.epoch != b.epoch ||
      a.step_in_epoch != b.step_in_epoch || a.updates != b.updates || a.streams != b.streams ||
      a.log != b.log || a.meta_params.has_value() != b.meta_params.has_value()) {
    return false;
  }
  if (a.meta_params && !bitwise_equal(*a.meta_params, *b.meta_params)) return false;
  return bitwise_equal(a.params, b.params) && bitwise_equal(a.velocity, b.velocity);
}

// ---------------------------------------------------------------------------

struct Trainer::Streams {
  std::map<std::string, SampleStream> by_name;
  SampleStream& at(const std::string& name) { return by_name.at(name); }
};

Trainer::Trainer(TrainerConfig config, RunMode mode, bench::SplitQuartet data)
    : config_(std::move(config)),
      mode_(mode),
      data_(data),
      detector_((config_.validate(), config_.detector)),
      heads_(config_.alignment,
             {config_.detector.feature_channels, config_.detector.feature_size(),
              config_.detector.feature_size()},
             config_.detector.fc_dim) {
  auto all_labeled = [](std::span<const det::DetectionSample> s) {
    for (const auto& x : s) {
      if (!x.labeled()) return false;
    }
    return true;
  };
  if (mode_ == RunMode::kOracle) {
    if (data_.target_train.empty() || !all_labeled(data_.target_train)) {
      throw ContractViolation("oracle: target_train labels were never generated or not unsealed");
    }
    return;
  }
  if (data_.source_train.empty() || !all_labeled(data_.source_train)) {
    throw ContractViolation("trainer: source_train must be non-empty and labeled");
  }
  if (mode_ == RunMode::kSourceOnly) return;
  if (data_.target_train.empty()) throw ContractViolation("trainer: target_train is empty");
  if (mode_ == RunMode::kMetaDa) {
    if (data_.source_val.empty() || data_.target_val.empty()) {
      throw ContractViolation("meta-da: validation streams are empty");
    }
    if (!all_labeled(data_.source_val)) throw ContractViolation("meta-da: source_val must be labeled");
    std::set<std::uint64_t> train_ids;
    for (const auto& s : data_.source_train) train_ids.insert(s.id);
    for (const auto& s : data_.target_train) train_ids.insert(s.id);
    for (const auto* val : {&data_.source_val, &data_.target_val}) {
      for (const auto& s : *val) {
        if (train_ids.count(s.id)) {
          throw ContractViolation("meta-da: sample " + std::to_string(s.id) +
                                  " is in both a training and a validation stream");
        }
      }
    }
  }
}

std::size_t Trainer::steps_per_epoch() const {
  return mode_ == RunMode::kOracle ? data_.target_train.size() : data_.source_train.size();
}

std::size_t Trainer::rounds_per_epoch() const {
  return (data_.source_train.size() + config_.m - 1) / config_.m;
}

TrainerState Trainer::initial_state() const {
  TrainerState state;
  state.mode = mode_;
  std::mt19937_64 rng(config_.seed);
  state.params = detector_.init(rng);
  state.params.merge(heads_.init(rng));
  state.velocity = zeros_like(state.params);
  state.phase = mode_ == RunMode::kMetaDa ? Phase::kMeta : Phase::kMain;
  for (const auto& name : stream_names(mode_)) {
    state.streams[name] = StreamState{mix_seed({config_.seed, hash_string(name)}), 0, 0, 0};
  }
  return state;
}

Trainer::Streams Trainer::open_streams(const TrainerState& state) const {
  if (state.mode != mode_) throw ContractViolation("trainer: state belongs to another mode");
  Streams streams;
  auto span_for = [&](const std::string& name) -> std::span<const det::DetectionSample> {
    if (name == kSourceTrain || name == kMetaSourceTrain) return data_.source_train;
    if (name == kTargetTrain || name == kMetaTargetTrain) return data_.target_train;
    if (name == kMetaSourceVal) return data_.source_val;
    return data_.target_val;
  };
  for (const auto& name : stream_names(mode_)) {
    const auto it = state.streams.find(name);
    if (it == state.streams.end()) throw ContractViolation("trainer: state lacks stream " + name);
    SampleStream s(name, span_for(name), it->second.seed);
    s.restore(it->second);
    streams.by_name.emplace(name, std::move(s));
  }
  return streams;
}

void Trainer::save_streams(TrainerState& state, const Streams& streams) const {
  for (const auto& [name, s] : streams.by_name) state.streams[name] = s.state();
}

double Trainer::decayed(double rate, std::uint64_t epoch, std::uint64_t epochs) const {
  return epochs > 1 && 2 * epoch >= epochs ? rate * config_.lr_decay : rate;
}

void Trainer::apply_update(TrainerState& state, const Gradients& g, double rate) const {
  const double mu = config_.momentum;
  ParameterSet params, velocity;
  for (const auto& [path, p] : state.params) {
    const auto v = state.velocity.at(path).data();
    const auto d = g.at(path).data();
    const auto x = p.data();
    std::vector<double> nv(x.size()), nx(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      nv[k] = mu * v[k] + d[k];
      nx[k] = x[k] - rate * nv[k];
    }
    velocity.insert(path, Tensor(p.shape(), std::move(nv)));
    params.insert(path, Tensor(p.shape(), std::move(nx)));
  }
  state.params = std::move(params);
  state.velocity = std::move(velocity);
  ++state.updates;
}

void Trainer::start_phase(TrainerState& state, Phase phase) const {
  state.phase = phase;
  state.epoch = 0;
  state.step_in_epoch = 0;
  state.velocity = zeros_like(state.params);
}

da::UdaLossBreakdown Trainer::uda(const ParameterSet& params, const det::DetectionSample& source,
                                  const det::DetectionSample& target,
                                  std::uint64_t dropout_seed) const {
  nn::ForwardContext ctx;
  ctx.training = true;
  ctx.dropout_seed = dropout_seed;
  return da::uda_loss(detector_, heads_, params, source, target, config_.lambda, ctx,
                      config_.reverse_gradient);
}

void Trainer::meta_round(TrainerState& state) const {
  Streams streams = open_streams(state);
  meta_round(state, streams);
  save_streams(state, streams);
}

void Trainer::single_step(TrainerState& state) const {
  Streams streams = open_streams(state);
  single_step(state, streams);
  save_streams(state, streams);
}

void Trainer::meta_round(TrainerState& state, Streams& streams) const {
  if (state.phase != Phase::kMeta) throw ContractViolation("meta_round: not in the meta phase");
  const std::size_t m = config_.m;
  std::vector<const det::DetectionSample*> s_tr(m), t_tr(m), s_val(m), t_val(m);
  for (std::size_t i = 0; i < m; ++i) {
    s_tr[i] = &streams.at(kMetaSourceTrain).next();
    t_tr[i] = &streams.at(kMetaTargetTrain).next();
    s_val[i] = &streams.at(kMetaSourceVal).next();
    t_val[i] = &streams.at(kMetaTargetVal).next();
  }
  const std::uint64_t round_seed = mix_seed({config_.seed, 2, state.epoch, state.step_in_epoch});
  std::vector<da::UdaTerms> terms;
  MetaObjective objective;
  objective.train_loss = [&](const ParameterSet& p, std::size_t i) {
    auto b = uda(p, *s_tr[i], *t_tr[i], mix_seed({round_seed, i, 0}));
    terms.push_back(da::values(b));
    return b.uda;
  };
  objective.val_loss = [&](const ParameterSet& p, std::size_t i) {
    return uda(p, *s_val[i], *t_val[i], mix_seed({round_seed, i, 1})).uda;
  };
  const MetaGradientResult r = meta_gradient(state.params, objective, config_.meta_settings());
  apply_update(state, r.grad, decayed(config_.beta, state.epoch, config_.meta_epochs));

  LossRow row;
  row.phase = Phase::kMeta;
  row.step = state.epoch * rounds_per_epoch() + state.step_in_epoch;
  for (const auto& t : terms) {
    row.det += t.det / double(m);
    row.img += t.img / double(m);
    row.inst += t.inst / double(m);
    row.da += t.da / double(m);
    row.uda += t.uda / double(m);
  }
  row.meta_loss = r.meta_loss;
  state.log.push_back(row);
  if (++state.step_in_epoch == rounds_per_epoch()) {
    ++state.epoch;
    state.step_in_epoch = 0;
  }
}

void Trainer::single_step(TrainerState& state, Streams& streams) const {
  if (state.phase != Phase::kMain) throw ContractViolation("single_step: not in the main phase");
  LossRow row;
  row.phase = Phase::kMain;
  row.step = state.epoch * steps_per_epoch() + state.step_in_epoch;
  Gradients g;
  {
    ad::GradRecord record("step");
    const ParameterSet vars = state.params.as_variables();
    Tensor loss;
    if (mode_ == RunMode::kSourceOnly || mode_ == RunMode::kOracle) {
      const auto& s = streams.at(mode_ == RunMode::kOracle ? kTargetTrain : kSourceTrain).next();
      const auto out = detector_.forward(vars, s.image, &*s.labels);
      loss = det::detection_loss(out, *s.labels, detector_.config()).total;
      row.det = row.uda = loss.item();
    } else {
      const auto& s = streams.at(kSourceTrain).next();
      const auto& t = streams.at(kTargetTrain).next();
      const auto b = uda(vars, s, t, mix_seed({config_.seed, 1, state.epoch, state.step_in_epoch}));
      const auto v = da::values(b);
      row.det = v.det;
      row.img = v.img;
      row.inst = v.inst;
      row.da = v.da;
      row.uda = v.uda;
      loss = b.uda;
    }
    g = ad::grad(loss, vars);
  }
  for (const auto& [path, t] : g) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw ad::NumericFault("train", "non-finite gradient at " + path);
    }
  }
  apply_update(state, g, decayed(config_.lr, state.epoch, config_.epochs));
  state.log.push_back(row);
  if (++state.step_in_epoch == steps_per_epoch()) {
    ++state.epoch;
    state.step_in_epoch = 0;
  }
}

bool Trainer::run(TrainerState& state, std::optional<std::uint64_t> max_updates) const {
  Streams streams = open_streams(state);
  std::uint64_t budget = max_updates.value_or(~std::uint64_t{0});
  while (!state.done() && budget > 0) {
    if (state.phase == Phase::kMeta) {
      if (state.epoch >= config_.meta_epochs) {
        state.meta_params = state.params;
        start_phase(state, Phase::kMain);
        log::debug("meta phase finished after " + std::to_string(state.updates) + " rounds");
        continue;
      }
      meta_round(state, streams);
    } else {
      if (state.epoch >= config_.epochs) {
        state.phase = Phase::kDone;
        continue;
      }
      single_step(state, streams);
    }
    --budget;
  }
  // A run that stops exactly at a phase boundary settles it now, so a
  // resumed run and an uninterrupted one hold the same state.
  if (state.phase == Phase::kMain && state.epoch >= config_.epochs) state.phase = Phase::kDone;
  save_streams(state, streams);
  return state.done();
}

// ---------------------------------------------------------------------------

namespace {

TrainerState run_to_end(const TrainerConfig& config, RunMode mode, const bench::SplitQuartet& q) {
  Trainer trainer(config, mode, q);
  TrainerState state = trainer.initial_state();
  trainer.run(state);
  return state;
}

}  // namespace

TrainerState train_meta_uda(const TrainerConfig& config, const bench::SplitQuartet& quartet) {
  return run_to_end(config, RunMode::kMetaDa, quartet);
}
TrainerState baseline_source_only(const TrainerConfig& config, const bench::SplitQuartet& quartet) {
  return run_to_end(config, RunMode::kSourceOnly, quartet);
}
TrainerState baseline_da_joint(const TrainerConfig& config, const bench::SplitQuartet& quartet) {
  return run_to_end(config, RunMode::kDa, quartet);
}
TrainerState baseline_oracle(const TrainerConfig& config, const bench::SplitQuartet& labeled_target) {
  return run_to_end(config, RunMode::kOracle, labeled_target);
}

int full_unroll_record_count(const TrainerConfig& config, const bench::SplitQuartet& quartet,
                             std::size_t steps) {
  if (steps < 1) throw ContractViolation("full unroll: steps must be >= 1");
  Trainer trainer(config, RunMode::kMetaDa, quartet);
  const TrainerState state = trainer.initial_state();
  MetaSettings settings{config.alpha, steps, MetaMode::kExact, InnerStyle::kChained};
  const auto& sv = quartet.source_val.front();
  const auto& tv = quartet.target_val.front();
  MetaObjective objective;
  objective.train_loss = [&](const ParameterSet& p, std::size_t i) {
    const auto& s = quartet.source_train[i % quartet.source_train.size()];
    const auto& t = quartet.target_train[i % quartet.target_train.size()];
    return trainer.uda(p, s, t, i).uda;
  };
  objective.val_loss = [&](const ParameterSet& p, std::size_t i) {
    if (i + 1 < steps) return Tensor::scalar(0.0);
    return trainer.uda(p, sv, tv, i).uda;
  };
  ad::reset_peak_record_count();
  meta_gradient(state.params, objective, settings);
  return ad::peak_record_count();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'U', 'D', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void params(const ParameterSet& p) {
    u64(p.size());
    for (const auto& [path, t] : p) {
      str(path);
      u64(t.dim());
      for (std::size_t d : t.shape()) u64(d);
      for (double v : t.data()) f64(v);
    }
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint64_t u64() {
    unsigned char b[8];
    in_.read(reinterpret_cast<char*>(b), 8);
    if (!in_) throw CheckpointError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::uint64_t limit = 1u << 26) {
    const auto n = u64();
    if (n > limit) throw CheckpointError("checkpoint: implausible length");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(count(1u << 16), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in_) throw CheckpointError("checkpoint: truncated");
    return s;
  }
  ParameterSet params() {
    ParameterSet p;
    const std::size_t n = count(1u << 16);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string path = str();
      ad::Shape shape(count(8));
      for (auto& d : shape) d = count();
      std::vector<double> values(ad::shape_numel(shape));
      for (auto& v : values) v = f64();
      p.insert(path, Tensor(shape, std::move(values)));
    }
    return p;
  }

 private:
  std::istream& in_;
};

}  // namespace

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    Writer w(out);
    w.u64(kCheckpointVersion);
    w.str(to_string(state.mode));
    w.str(to_string(state.phase));
    w.u64(state.epoch);
    w.u64(state.step_in_epoch);
    w.u64(state.updates);
    w.params(state.params);
    w.params(state.velocity);
    w.u64(state.meta_params.has_value());
    if (state.meta_params) w.params(*state.meta_params);
    w.u64(state.streams.size());
    for (const auto& [name, s] : state.streams) {
      w.str(name);
      w.u64(s.seed);
      w.u64(s.epoch);
      w.u64(s.cursor);
      w.u64(s.reads);
    }
    w.u64(state.log.size());
    for (const auto& r : state.log) {
      w.str(to_string(r.phase));
      w.u64(r.step);
      for (double v : {r.det, r.img, r.inst, r.da, r.uda}) w.f64(v);
      w.u64(r.meta_loss.has_value());
      w.f64(r.meta_loss.value_or(0.0));
    }
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint");
  }
  Reader r(in);
  if (r.u64() != kCheckpointVersion) throw CheckpointError(path.string() + ": unsupported version");
  auto phase_from = [](const std::string& s) {
    for (Phase p : {Phase::kMeta, Phase::kMain, Phase::kDone}) {
      if (to_string(p) == s) return p;
    }
    throw CheckpointError("checkpoint: unknown phase " + s);
  };
  TrainerState state;
  try {
    state.mode = run_mode_from_string(r.str());
  } catch (const ContractViolation& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  state.phase = phase_from(r.str());
  state.epoch = r.u64();
  state.step_in_epoch = r.u64();
  state.updates = r.u64();
  state.params = r.params();
  state.velocity = r.params();
  if (r.u64()) state.meta_params = r.params();
  const std::size_t n_streams = r.count(64);
  for (std::size_t i = 0; i < n_streams; ++i) {
    const std::string name = r.str();
    StreamState s;
    s.seed = r.u64();
    s.epoch = r.u64();
    s.cursor = r.u64();
    s.reads = r.u64();
    state.streams[name] = s;
  }
  const std::size_t n_rows = r.count();
  state.log.reserve(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    LossRow row;
    row.phase = phase_from(r.str());
    row.step = r.u64();
    row.det = r.f64();
    row.img = r.f64();
    row.inst = r.f64();
    row.da = r.f64();
    row.uda = r.f64();
    const bool has_meta = r.u64() != 0;
    const double meta = r.f64();
    if (has_meta) row.meta_loss = meta;
    state.log.push_back(row);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  if (state.params.paths() != state.velocity.paths()) {
    throw CheckpointError(path.string() + ": momentum buffers do not match parameters");
  }
  return state;
}

}  // namespace metauda::train
