// SPDX-License-Identifier: Apache-2.0
//
// Bi-level core, independent of the detector: inner gradient steps and the
// meta-gradient of a sum of validation losses taken at the adapted points.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "metauda/autodiff/grad.hpp"

namespace metauda::train {

using ad::Gradients;
using ad::ParameterSet;
using ad::Tensor;

enum class MetaMode { kExact, kFirstOrder };
enum class InnerStyle { kRestart, kChained };

std::string to_string(MetaMode mode);
std::string to_string(InnerStyle style);
MetaMode meta_mode_from_string(const std::string& name);
InnerStyle inner_style_from_string(const std::string& name);

struct MetaSettings {
  double alpha = 0.001;
  std::size_t m = 3;
  MetaMode mode = MetaMode::kExact;
  InnerStyle inner_style = InnerStyle::kRestart;
};

/// Loss callbacks indexed by inner step. They must be deterministic in
/// (params, i).
struct MetaObjective {
  std::function<Tensor(const ParameterSet& params, std::size_t i)> train_loss;
  std::function<Tensor(const ParameterSet& params, std::size_t i)> val_loss;
};

/// θ − α·∇θ loss. With keep_record the result stays differentiable with
/// respect to theta (second order). Throws NumericFault on a non-finite
/// gradient.
ParameterSet inner_step(const ParameterSet& theta, const Tensor& train_loss, double alpha,
                        bool keep_record);

struct MetaGradientResult {
  Gradients grad;
  double meta_loss = 0.0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
};

/// ∇θ Σᵢ val_loss(θ'ᵢ, i). Each inner step runs inside its own
/// differentiation record and the outer backward in one more, so at most
/// m + 1 records are live.
MetaGradientResult meta_gradient(const ParameterSet& theta, const MetaObjective& objective,
                                 const MetaSettings& settings);

/// Σᵢ val_loss(θ'ᵢ, i) without any second-order record. Works under
/// NoGradGuard too.
double meta_objective(const ParameterSet& theta, const MetaObjective& objective,
                      const MetaSettings& settings);

}  // namespace metauda::train
