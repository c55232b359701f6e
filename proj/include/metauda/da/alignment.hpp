// SPDX-License-Identifier: Apache-2.0
//
// Adversarial feature alignment at image and instance level, and the
// combined adaptation objective L_uda = L_det + lambda * (L_img + L_inst).

#pragma once

#include <random>

#include "metauda/det/detector.hpp"
#include "metauda/nn/layers.hpp"

namespace metauda::da {

using ad::ParameterSet;
using ad::Tensor;

struct AlignmentConfig {
  std::size_t image_disc_width = 8;
  std::size_t inst_disc_width = 32;
  double inst_keep = 0.5;
  double grl_weight = 1.0;

  void validate() const;
};

/// The two discriminators. Parameters live under "da/img" and "da/inst".
class AlignmentHeads {
 public:
  AlignmentHeads(AlignmentConfig config, ad::Shape feature_shape, std::size_t inst_dim);

  const AlignmentConfig& config() const { return config_; }
  ParameterSet init(std::mt19937_64& rng) const;

  /// (1,H,W) raw outputs. With reverse = false the GRL is skipped, which
  /// only changes what flows back into the features.
  Tensor image_logits(const ParameterSet& params, const Tensor& f_img, bool reverse = true) const;
  /// (D,1) raw outputs.
  Tensor instance_logits(const ParameterSet& params, const Tensor& f_inst,
                         const nn::ForwardContext& ctx, bool reverse = true) const;

 private:
  AlignmentConfig config_;
  nn::Sequential image_;
  nn::Sequential instance_;
};

/// ls(D_img(F_a), label_a) + ls(D_img(F_b), label_b).
Tensor image_pair_loss(const AlignmentHeads& heads, const ParameterSet& params,
                       const Tensor& f_a, nn::DomainLabel label_a, const Tensor& f_b,
                       nn::DomainLabel label_b, bool reverse = true);
Tensor image_alignment_loss(const AlignmentHeads& heads, const ParameterSet& params,
                            const Tensor& f_source, const Tensor& f_target, bool reverse = true);

/// Same for per-proposal rows. Zero rows on either side give 0 and a warning.
/// Dropout masks depend on ctx.dropout_seed and the domain label only.
Tensor instance_pair_loss(const AlignmentHeads& heads, const ParameterSet& params,
                          const Tensor& f_a, nn::DomainLabel label_a, const Tensor& f_b,
                          nn::DomainLabel label_b, const nn::ForwardContext& ctx,
                          bool reverse = true);
Tensor instance_alignment_loss(const AlignmentHeads& heads, const ParameterSet& params,
                               const Tensor& f_source, const Tensor& f_target,
                               const nn::ForwardContext& ctx, bool reverse = true);

struct UdaLossBreakdown {
  Tensor det;
  Tensor img;
  Tensor inst;
  Tensor da;   // img + inst
  Tensor uda;  // det + lambda * da
};

UdaLossBreakdown compose_uda(Tensor det, Tensor img, Tensor inst, double lambda);

struct UdaTerms {
  double det = 0.0;
  double img = 0.0;
  double inst = 0.0;
  double da = 0.0;
  double uda = 0.0;
};
UdaTerms values(const UdaLossBreakdown& loss);

/// Forwards both images with the shared parameters, supervises the source
/// image only and aligns the pair. A labeled target is accepted with a
/// warning and its labels are ignored.
UdaLossBreakdown uda_loss(const det::Detector& detector, const AlignmentHeads& heads,
                          const ParameterSet& params, const det::DetectionSample& source,
                          const det::DetectionSample& target, double lambda,
                          const nn::ForwardContext& ctx = {}, bool reverse = true);

}  // namespace metauda::da
