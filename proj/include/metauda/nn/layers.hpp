// SPDX-License-Identifier: Apache-2.0
//
// Layers and losses shared by the detector and the domain discriminators.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metauda/autodiff/grad.hpp"
#include "metauda/autodiff/ops.hpp"

namespace metauda::nn {

using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;

/// 1 = source, 0 = target.
enum class DomainLabel : int { kTarget = 0, kSource = 1 };

/// Identity forward; multiplies the upstream gradient by -lambda_grl.
Tensor grl_apply(const Tensor& x, double lambda_grl);

/// Least-squares domain loss over a map of raw discriminator outputs:
/// mean of y(1-p)² + (1-y)p² with p = sigmoid(pred).
Tensor ls_domain_loss(const Tensor& pred, DomainLabel label);

Tensor softmax_ce(const Tensor& logits, const std::vector<std::size_t>& labels);
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

/// Adds a per-channel bias (C) to a (C,H,W) map.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// x (N,F) · weight (F,U) + bias (U).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Inverted dropout: keeps each element with probability keep and rescales
/// by 1/keep. Identity when keep == 1.
Tensor dropout(const Tensor& x, double keep, std::mt19937_64& rng);

/// Centered uniform in ±sqrt(6/fan_in).
Tensor uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

enum class LayerKind { kConv, kFullyConnected, kRelu, kDropout, kPool, kGrl };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t kernel = 1;    // conv kernel or pool window
  std::size_t outputs = 0;   // conv channels or fc units
  double keep = 1.0;         // dropout keep probability
  double grl_weight = 1.0;   // GRL scale

  static LayerSpec conv(std::size_t kernel, std::size_t channels);
  static LayerSpec fc(std::size_t units);
  static LayerSpec relu();
  static LayerSpec dropout(double keep);
  static LayerSpec pool(std::size_t window);
  static LayerSpec grl(double weight);
};

/// Dropout control for one forward pass. Masks are a pure function of the
/// seed and the layer index.
struct ForwardContext {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// A layer stack whose parameters live under a fixed path prefix.
class Sequential {
 public:
  /// input_shape is (C,H,W) for conv stacks and (N,F) for fc stacks; N may
  /// be any value at run time.
  Sequential(std::vector<LayerSpec> specs, Shape input_shape, std::string prefix);

  ParameterSet init(std::mt19937_64& rng) const;
  /// Runs layers [first_layer, end).
  Tensor forward(const ParameterSet& params, const Tensor& x, const ForwardContext& ctx,
                 std::size_t first_layer = 0) const;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const std::string& prefix() const { return prefix_; }
  const Shape& output_shape() const { return output_shape_; }
  /// Overrides the scale of every GRL layer.
  void set_grl_weight(double weight);

 private:
  std::string param_path(std::size_t layer, const char* name) const;

  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  std::string prefix_;
  std::vector<Shape> in_shapes_;
  Shape output_shape_;
};

/// Validates that the stack starts with a GRL and wires a Sequential.
Sequential build_discriminator(std::vector<LayerSpec> specs, Shape input_shape,
                               std::string prefix);

/// Image-level discriminator stack: GRL, 1×1 conv, two 3×3 convs, 3×3 conv
/// to one channel.
std::vector<LayerSpec> image_discriminator_spec(std::size_t width, double grl_weight);
/// Instance-level discriminator stack: GRL, two fc+relu+dropout blocks, fc
/// to one unit.
std::vector<LayerSpec> instance_discriminator_spec(std::size_t width, double keep,
                                                   double grl_weight);

}  // namespace metauda::nn
