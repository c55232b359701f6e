// SPDX-License-Identifier: Apache-2.0
//
// Acceptance criteria 1-9. One PASS or FAIL line per criterion; the exit
// status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>

#include "metauda/harness/experiment.hpp"
#include "metauda/harness/gradcheck.hpp"
#include "metauda/util/log.hpp"
#include "support/map_oracle.hpp"
#include "support/primitive_cases.hpp"

using namespace metauda;
using namespace metauda::train;
using harness::ApVariant;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

struct SmallData {
  bench::Benchmark b = bench::generate_benchmark({}, {6, 6, 3, 3, 2, 2}, 3);
  bench::SplitQuartet quartet() const { return bench::uda_quartet(b); }
};

TrainerConfig small_config() {
  TrainerConfig c;
  c.epochs = 2;
  c.meta_epochs = 1;
  c.seed = 17;
  return c;
}

Outcome gradient_oracles() {
  const auto start = std::chrono::steady_clock::now();
  double worst_primitive = 0.0, worst_composed = 0.0;
  std::size_t largest = 0, n = 0;
  for (const auto& c : testing::primitive_cases(3)) {
    worst_primitive = std::max(worst_primitive, testing::primitive_error(c));
    largest = std::max(largest, c.at.parameter_count());
    ++n;
  }
  for (const auto& c : harness::run_grad_checks(4)) {
    if (c.name.starts_with("meta")) continue;
    worst_composed = std::max(worst_composed, c.relative_error);
    largest = std::max(largest, c.parameters);
  }
  const double t = seconds_since(start);
  return {worst_primitive < 1e-4 && worst_composed < 1e-4 && largest <= 500 && t < 120,
          fmt("%zu primitives max rel err %.1e, L_det/L_img/L_inst/L_uda max %.1e, <= %zu params, %.1f s", n,
              worst_primitive, worst_composed, largest, t)};
}

Outcome bilevel_oracle() {
  const auto start = std::chrono::steady_clock::now();
  // L_train = 1/2 θᵀAθ + aᵀθ, L_val = 1/2 θᵀVθ + vᵀθ with symmetric A, V.
  const double A[2][2] = {{1.7, 0.4}, {0.4, 0.9}}, a[2] = {0.3, -0.8};
  const double V[2][2] = {{0.6, -0.2}, {-0.2, 1.3}}, v[2] = {-0.5, 0.25};
  const double alpha = 0.3, th[2] = {0.7, -1.1};
  auto quad = [](const double (&M)[2][2], const double (&c)[2]) {
    return [&M, &c](const ad::ParameterSet& p, std::size_t) {
      const ad::Tensor& x = p.at("theta");
      const ad::Tensor Mx = ad::reshape(ad::matmul(ad::Tensor({2, 2}, {M[0][0], M[0][1], M[1][0], M[1][1]}),
                                                   ad::reshape(x, {2, 1})),
                                        {2});
      return ad::add(ad::mul(ad::dot(x, Mx), 0.5), ad::dot(ad::Tensor({2}, {c[0], c[1]}), x));
    };
  };
  MetaObjective obj{quad(A, a), quad(V, v)};
  ad::ParameterSet theta;
  theta.insert("theta", ad::Tensor({2}, {th[0], th[1]}));
  const auto g = meta_gradient(theta, obj, {alpha, 1, MetaMode::kExact}).grad.at("theta");

  double tp[2], gv[2], expect[2];
  for (int i = 0; i < 2; ++i) tp[i] = th[i] - alpha * (A[i][0] * th[0] + A[i][1] * th[1] + a[i]);
  for (int i = 0; i < 2; ++i) gv[i] = V[i][0] * tp[0] + V[i][1] * tp[1] + v[i];
  for (int i = 0; i < 2; ++i) expect[i] = gv[i] - alpha * (A[i][0] * gv[0] + A[i][1] * gv[1]);
  const double quad_err = std::max(std::abs(g[0] - expect[0]), std::abs(g[1] - expect[1]));

  double toy_err = 0.0;
  std::size_t params = 0;
  for (const auto& c : harness::run_grad_checks(4)) {
    if (!c.name.starts_with("meta")) continue;
    toy_err = std::max(toy_err, c.relative_error);
    params = c.parameters;
  }
  const double t = seconds_since(start);
  return {quad_err < 1e-10 && toy_err < 1e-3 && params <= 200 && t < 300,
          fmt("quadratic abs err %.1e, toy detector (%zu params) rel err %.1e, %.1f s", quad_err, params, toy_err, t)};
}

Outcome grl_contract() {
  bool bitwise = true;
  std::mt19937_64 rng(9);
  for (double lambda : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    ad::ParameterSet p;
    p.insert("x", testing::random_tensor(rng, {7}));
    p = p.as_variables();
    const ad::Tensor up = testing::random_tensor(rng, {7});
    const auto g = ad::grad(ad::dot(nn::grl_apply(p.at("x"), lambda), up), p).at("x");
    for (std::size_t i = 0; i < 7; ++i) bitwise &= g[i] == -lambda * up[i];
  }

  // Composed alignment loss: reversal flips exactly the encoder's gradient.
  SmallData data;
  const auto q = data.quartet();
  TrainerConfig on = small_config(), off = small_config();
  off.reverse_gradient = false;
  const Trainer t_on(on, RunMode::kDa, q), t_off(off, RunMode::kDa, q);
  const auto params = t_on.initial_state().params.as_variables();
  const auto g_on = ad::grad(t_on.uda(params, q.source_train[0], q.target_train[0], 5).da, params);
  const auto g_off = ad::grad(t_off.uda(params, q.source_train[0], q.target_train[0], 5).da, params);
  bool flipped = true, nonzero = false;
  for (const auto& [path, g] : g_off) {
    const bool encoder = path.starts_with("det/");
    const ad::Tensor expect = encoder ? ad::neg(g) : g;
    flipped &= g_on.at(path).same_values(expect);
    if (encoder)
      for (std::size_t i = 0; i < g.numel(); ++i) nonzero |= g[i] != 0.0;
  }
  return {bitwise && flipped && nonzero,
          fmt("backward = -lambda x upstream bitwise for lambda in {1/4..4}: %s; encoder gradient of L_da "
              "flips sign exactly, discriminators unchanged: %s",
              bitwise ? "yes" : "no", flipped && nonzero ? "yes" : "no")};
}

Outcome degeneracy() {
  SmallData data;
  TrainerConfig c = small_config();
  c.beta = 0.0;
  c.m = 1;
  const auto meta = train_meta_uda(c, data.quartet());
  const auto joint = baseline_da_joint(c, data.quartet());
  std::vector<LossRow> main_rows;
  for (const auto& r : meta.log)
    if (r.phase == Phase::kMain) main_rows.push_back(r);
  const bool meta_ok = meta.params.same_values(joint.params) && main_rows == joint.log;

  TrainerConfig z = small_config();
  z.lambda = 0.0;
  const auto da = baseline_da_joint(z, data.quartet());
  const auto so = baseline_source_only(z, data.quartet());
  bool lambda_ok = da.params.subset("det/").same_values(so.params.subset("det/")) && da.log.size() == so.log.size();
  for (std::size_t i = 0; lambda_ok && i < da.log.size(); ++i) lambda_ok &= da.log[i].det == so.log[i].det;
  return {meta_ok && lambda_ok, fmt("beta=0, m=1 equals joint adaptation bitwise: %s; lambda=0 equals source-only: %s",
                                    meta_ok ? "yes" : "no", lambda_ok ? "yes" : "no")};
}

Outcome record_bound() {
  SmallData data;
  bool ok = true;
  std::string detail;
  for (std::size_t m : {1u, 3u, 5u}) {
    TrainerConfig c = small_config();
    c.m = m;
    c.epochs = 1;
    const Trainer t(c, RunMode::kMetaDa, data.quartet());
    auto state = t.initial_state();
    ad::reset_peak_record_count();
    t.run(state);
    const int peak = ad::peak_record_count();
    ok &= peak <= static_cast<int>(m) + 1 && ad::live_record_count() == 0;
    detail += fmt("%sm=%zu peak %d", detail.empty() ? "" : ", ", m, peak);
  }
  const int unroll = full_unroll_record_count(small_config(), data.quartet(), 6);
  return {ok, detail + fmt(" (a 6-step full unroll peaks at %d)", unroll)};
}

Outcome ablation(harness::AblationReport& out, double& seconds) {
  const auto start = std::chrono::steady_clock::now();
  auto config = harness::load_config(fs::path(METAUDA_SOURCE_DIR) / "configs/default.cfg");
  const fs::path dir = fs::temp_directory_path() / ("metauda_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  out = harness::run_ablation(config, dir);
  fs::remove_all(dir);
  seconds = seconds_since(start);
  const auto& s = out.summaries;
  const bool ok = out.complete && out.seeds.size() >= 3 && out.strict_ordering && out.leakage_free && seconds < 1800;
  return {ok, fmt("%zu seeds: source-only %.1f < da %.1f < meta-da %.1f <= oracle %.1f, meta-da - da = %+.1f, "
                  "leakage-free %s, %.0f s",
                  out.seeds.size(), 100 * s[0].target_mean, 100 * s[1].target_mean, 100 * s[2].target_mean,
                  100 * s[3].target_mean, 100 * out.meta_margin, out.leakage_free ? "yes" : "no", seconds)};
}

Outcome domain_gap(const harness::AblationReport& r) {
  const auto& so = r.summaries[0];
  const double gap = so.source_mean - so.target_mean;
  return {so.runs >= 3 && gap >= 0.15,
          fmt("source-only source-test %.1f, target-test %.1f, gap %.1f points", 100 * so.source_mean,
              100 * so.target_mean, 100 * gap)};
}

Outcome map_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t exact = 0, total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto [dets, gts] = testing::random_map_instance(rng);
    for (ApVariant v : {ApVariant::kAllPoint, ApVariant::kElevenPoint}) {
      exact += harness::evaluate_map(dets, gts, 2, 0.5, v).map == testing::brute_force_map(dets, gts, 2, v);
      ++total;
    }
  }
  harness::GroundTruthByImage gts{{1, {{0, {0, 0, 10, 10}}, {0, {20, 20, 30, 30}}}}};
  harness::DetectionsByImage dets{
      {1, {{0, {0, 0, 10, 10}, 0.9}, {0, {40, 40, 45, 45}, 0.8}, {0, {20, 20, 30, 30}, 0.7}}}};
  const double hand = harness::evaluate_map(dets, gts, 1).map;
  const bool hand_ok = hand == (1.0 + 2.0 / 3.0) / 2.0 && std::abs(hand - 0.8333) < 5e-5;
  return {exact == total && hand_ok,
          fmt("%zu/%zu random instances exact, hand case %.6f", exact, total, hand)};
}

Outcome determinism() {
  SmallData data;
  const TrainerConfig c = small_config();
  bool repeat = true;
  for (RunMode mode : {RunMode::kSourceOnly, RunMode::kDa, RunMode::kMetaDa}) {
    const Trainer t(c, mode, data.quartet());
    auto a = t.initial_state(), b = t.initial_state();
    t.run(a);
    t.run(b);
    repeat &= same_state(a, b);
  }
  auto cfg = harness::parse_config("");
  for (const char* kv : {"epochs=1", "meta_epochs=1", "n_source_train=6", "n_target_train=6", "n_source_val=3",
                         "n_target_val=3", "n_source_test=4", "n_target_test=4"}) {
    const std::string s = kv;
    harness::set_config_value(cfg, s.substr(0, s.find('=')), s.substr(s.find('=') + 1));
  }
  const auto bench = harness::load_benchmark(cfg);
  auto r1 = harness::run_cell(cfg, bench, RunMode::kMetaDa, 0, std::nullopt).report;
  auto r2 = harness::run_cell(cfg, bench, RunMode::kMetaDa, 0, std::nullopt).report;
  r1.wall_time_s = r2.wall_time_s = 0.0;
  repeat &= harness::to_json(r1).dump() == harness::to_json(r2).dump();

  const Trainer t(c, RunMode::kMetaDa, data.quartet());
  auto full = t.initial_state();
  t.run(full);
  bool resume = true;
  const fs::path file = fs::temp_directory_path() / ("metauda_acceptance_ckpt_" + std::to_string(::getpid()));
  for (std::uint64_t stop : {1u, 2u, 4u, 7u}) {
    auto part = t.initial_state();
    t.run(part, stop);
    save_checkpoint(part, file);
    auto resumed = load_checkpoint(file);
    const Trainer fresh(c, RunMode::kMetaDa, data.quartet());
    fresh.run(resumed);
    resume &= same_state(full, resumed);
  }
  fs::remove(file);
  return {repeat && resume, fmt("repeated runs and reports identical: %s; resume after 1, 2, 4, 7 updates "
                                "bitwise identical: %s",
                                repeat ? "yes" : "no", resume ? "yes" : "no")};
}

}  // namespace

int main() {
  log::set_level(log::Level::kWarn);
  int failures = 0;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "gradient oracle suite", gradient_oracles);
  report(2, "bi-level oracle", bilevel_oracle);
  report(3, "gradient reversal contract", grl_contract);
  report(4, "degeneracy", degeneracy);
  report(5, "online record bound", record_bound);
  harness::AblationReport ladder;
  double seconds = 0.0;
  bool ran = false;
  report(6, "ablation ladder", [&] {
    ran = true;
    return ablation(ladder, seconds);
  });
  report(7, "domain gap", [&]() -> Outcome {
    if (!ran || ladder.summaries.size() < 4) return {false, "ablation did not produce summaries"};
    return domain_gap(ladder);
  });
  report(8, "mAP oracle", map_oracle);
  report(9, "determinism and persistence", determinism);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
