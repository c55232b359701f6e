// SPDX-License-Identifier: Apache-2.0

#include "metauda/harness/gradcheck.hpp"

#include <random>

#include "metauda/train/trainer.hpp"

namespace metauda::harness {

using namespace metauda::train;

namespace {

TrainerConfig toy_config() {
  TrainerConfig c;
  c.detector.image_size = 8;
  c.detector.stem_channels = 2;
  c.detector.feature_channels = 2;
  c.detector.rpn_channels = 2;
  c.detector.fc_dim = 2;
  c.detector.num_classes = 1;
  c.detector.anchor_shapes = {{4, 4}};
  c.detector.max_proposals = 4;
  c.alignment.image_disc_width = 1;
  c.alignment.inst_disc_width = 2;
  c.alignment.inst_keep = 1.0;
  c.lambda = 0.5;
  // Through a reversal layer the reverse-mode field is not the gradient of
  // any scalar, so the checks difference the plain objective.
  c.reverse_gradient = false;
  return c;
}

}  // namespace

std::vector<GradCheck> run_grad_checks(std::uint64_t seed) {
  const TrainerConfig c = toy_config();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto image = [&] {
    det::Image im{8, 8, 1, std::vector<double>(64)};
    for (auto& v : im.pixels) v = u(rng);
    return im;
  };
  std::vector<det::DetectionSample> src, tgt;
  for (int i = 0; i < 4; ++i) {
    src.push_back({std::uint64_t(i), image(),
                   std::vector<det::GroundTruth>{{0, {1.0 + i % 2, 1.0, 6.0 + i % 2, 7.0}}},
                   det::Domain::kSource});
    tgt.push_back({std::uint64_t(10 + i), image(), std::nullopt, det::Domain::kTarget});
  }
  const bench::SplitQuartet q{{src.data(), 2}, {tgt.data(), 2}, {src.data() + 2, 2}, {tgt.data() + 2, 2}};
  const Trainer trainer(c, RunMode::kMetaDa, q);

  // Random biases keep every unit active.
  ParameterSet theta;
  std::uniform_real_distribution<double> b(-0.2, 0.2);
  for (const auto& [path, t] : trainer.initial_state().params) {
    if (!path.ends_with("bias")) {
      theta.insert(path, t);
      continue;
    }
    std::vector<double> v(t.numel());
    for (auto& x : v) {
      do {
        x = b(rng);
      } while (std::abs(x) <= 0.02);
    }
    theta.insert(path, ad::Tensor(t.shape(), std::move(v)));
  }

  std::vector<GradCheck> out;
  const double eps = 1e-6;
  auto check_loss = [&](const std::string& name, auto pick) {
    det::ProposalTape tape;
    det::ProposalTapeScope scope(tape);
    const auto vars = theta.as_variables();
    const auto analytic = ad::grad(pick(trainer.uda(vars, q.source_train[0], q.target_train[0], 1)), vars);
    tape.replay = true;
    const auto numeric = ad::finite_diff_gradient(
        [&](const ParameterSet& p) {
          tape.cursor = 0;
          return pick(trainer.uda(p, q.source_train[0], q.target_train[0], 1)).item();
        },
        theta, eps);
    out.push_back({name, theta.parameter_count(), ad::relative_error(analytic, numeric), 1e-4});
  };
  check_loss("L_det", [](const da::UdaLossBreakdown& l) { return l.det; });
  check_loss("L_img", [](const da::UdaLossBreakdown& l) { return l.img; });
  check_loss("L_inst", [](const da::UdaLossBreakdown& l) { return l.inst; });
  check_loss("L_uda", [](const da::UdaLossBreakdown& l) { return l.uda; });

  MetaObjective obj;
  obj.train_loss = [&](const ParameterSet& p, std::size_t i) {
    return trainer.uda(p, q.source_train[i], q.target_train[i], 1).uda;
  };
  obj.val_loss = [&](const ParameterSet& p, std::size_t i) {
    return trainer.uda(p, q.source_val[i], q.target_val[i], 2).uda;
  };
  for (InnerStyle style : {InnerStyle::kRestart, InnerStyle::kChained}) {
    const MetaSettings s{0.5, 2, MetaMode::kExact, style};
    det::ProposalTape tape;
    det::ProposalTapeScope scope(tape);
    const auto exact = meta_gradient(theta, obj, s);
    tape.replay = true;
    const auto numeric = ad::finite_diff_gradient(
        [&](const ParameterSet& p) {
          tape.cursor = 0;
          return meta_objective(p, obj, s);
        },
        theta, eps);
    out.push_back({"meta-gradient (" + to_string(style) + ")", theta.parameter_count(),
                   ad::relative_error(exact.grad, numeric), 1e-3});
  }
  return out;
}

}  // namespace metauda::harness
