// SPDX-License-Identifier: Apache-2.0

#include "metauda/da/alignment.hpp"

#include <cmath>

#include "metauda/autodiff/ops.hpp"
#include "metauda/util/log.hpp"

namespace metauda::da {

using ad::ContractViolation;
using nn::DomainLabel;

void AlignmentConfig::validate() const {
  if (image_disc_width == 0 || inst_disc_width == 0) {
    throw ContractViolation("discriminator widths must be positive");
  }
  if (!(inst_keep > 0.0 && inst_keep <= 1.0)) {
    throw ContractViolation("instance discriminator keep-probability must be in (0,1]");
  }
  if (!(grl_weight >= 0.0)) throw ContractViolation("lambda_grl must be >= 0");
}

AlignmentHeads::AlignmentHeads(AlignmentConfig config, ad::Shape feature_shape,
                               std::size_t inst_dim)
    : config_((config.validate(), config)),
      image_(nn::build_discriminator(
          nn::image_discriminator_spec(config.image_disc_width, config.grl_weight),
          std::move(feature_shape), "da/img")),
      instance_(nn::build_discriminator(
          nn::instance_discriminator_spec(config.inst_disc_width, config.inst_keep,
                                          config.grl_weight),
          {1, inst_dim}, "da/inst")) {}

ParameterSet AlignmentHeads::init(std::mt19937_64& rng) const {
  ParameterSet p = image_.init(rng);
  p.merge(instance_.init(rng));
  return p;
}

Tensor AlignmentHeads::image_logits(const ParameterSet& params, const Tensor& f_img,
                                    bool reverse) const {
  return image_.forward(params, f_img, {}, reverse ? 0 : 1);
}

Tensor AlignmentHeads::instance_logits(const ParameterSet& params, const Tensor& f_inst,
                                       const nn::ForwardContext& ctx, bool reverse) const {
  return instance_.forward(params, f_inst, ctx, reverse ? 0 : 1);
}

Tensor image_pair_loss(const AlignmentHeads& heads, const ParameterSet& params,
                       const Tensor& f_a, DomainLabel label_a, const Tensor& f_b,
                       DomainLabel label_b, bool reverse) {
  if (f_a.shape() != f_b.shape()) {
    throw ContractViolation("image alignment: feature maps " + ad::shape_str(f_a.shape()) +
                            " and " + ad::shape_str(f_b.shape()) + " differ");
  }
  Tensor a = nn::ls_domain_loss(heads.image_logits(params, f_a, reverse), label_a);
  Tensor b = nn::ls_domain_loss(heads.image_logits(params, f_b, reverse), label_b);
  return ad::add(a, b);
}

Tensor image_alignment_loss(const AlignmentHeads& heads, const ParameterSet& params,
                            const Tensor& f_source, const Tensor& f_target, bool reverse) {
  return image_pair_loss(heads, params, f_source, DomainLabel::kSource, f_target,
                         DomainLabel::kTarget, reverse);
}

namespace {

nn::ForwardContext domain_context(const nn::ForwardContext& ctx, DomainLabel label) {
  const std::uint64_t salt = label == DomainLabel::kSource ? 0x5ULL : 0x7ULL;
  return {ctx.training, ctx.dropout_seed * 0x100000001B3ULL + salt};
}

bool empty_rows(const Tensor& f) { return !f.defined() || f.numel() == 0; }

}  // namespace

Tensor instance_pair_loss(const AlignmentHeads& heads, const ParameterSet& params,
                          const Tensor& f_a, DomainLabel label_a, const Tensor& f_b,
                          DomainLabel label_b, const nn::ForwardContext& ctx, bool reverse) {
  if (empty_rows(f_a) || empty_rows(f_b)) {
    log::warn("instance alignment: no proposals on one side, L_inst set to 0");
    return Tensor::scalar(0.0);
  }
  Tensor a = nn::ls_domain_loss(
      heads.instance_logits(params, f_a, domain_context(ctx, label_a), reverse), label_a);
  Tensor b = nn::ls_domain_loss(
      heads.instance_logits(params, f_b, domain_context(ctx, label_b), reverse), label_b);
  return ad::add(a, b);
}

Tensor instance_alignment_loss(const AlignmentHeads& heads, const ParameterSet& params,
                               const Tensor& f_source, const Tensor& f_target,
                               const nn::ForwardContext& ctx, bool reverse) {
  return instance_pair_loss(heads, params, f_source, DomainLabel::kSource, f_target,
                            DomainLabel::kTarget, ctx, reverse);
}

UdaLossBreakdown compose_uda(Tensor det, Tensor img, Tensor inst, double lambda) {
  if (!(lambda >= 0.0)) throw ContractViolation("uda: lambda must be >= 0");
  UdaLossBreakdown out;
  out.det = std::move(det);
  out.img = std::move(img);
  out.inst = std::move(inst);
  out.da = ad::add(out.img, out.inst);
  out.uda = ad::add(out.det, ad::mul(out.da, lambda));
  return out;
}

UdaTerms values(const UdaLossBreakdown& loss) {
  return {loss.det.item(), loss.img.item(), loss.inst.item(), loss.da.item(), loss.uda.item()};
}

UdaLossBreakdown uda_loss(const det::Detector& detector, const AlignmentHeads& heads,
                          const ParameterSet& params, const det::DetectionSample& source,
                          const det::DetectionSample& target, double lambda,
                          const nn::ForwardContext& ctx, bool reverse) {
  if (!source.labeled()) {
    throw ContractViolation("uda: source sample " + std::to_string(source.id) + " is unlabeled");
  }
  if (target.labeled()) {
    log::warn("uda: target sample " + std::to_string(target.id) +
              " carries labels; they are ignored");
  }
  const auto& gts = *source.labels;
  const det::DetectorOutput s = detector.forward(params, source.image, &gts);
  const det::DetectorOutput t = detector.forward(params, target.image, nullptr, false);
  Tensor l_det = det::detection_loss(s, gts, detector.config()).total;
  Tensor l_img = image_alignment_loss(heads, params, s.f_img, t.f_img, reverse);
  Tensor l_inst =
      instance_alignment_loss(heads, params, s.proposal_features(), t.proposal_features(), ctx,
                              reverse);
  return compose_uda(std::move(l_det), std::move(l_img), std::move(l_inst), lambda);
}

}  // namespace metauda::da
