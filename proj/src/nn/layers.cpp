// SPDX-License-Identifier: Apache-2.0

#include "metauda/nn/layers.hpp"

#include <cmath>

namespace metauda::nn {

using ad::ContractViolation;

Tensor grl_apply(const Tensor& x, double lambda_grl) {
  if (!(lambda_grl >= 0.0)) throw ContractViolation("grl: lambda_grl must be >= 0");
  auto d = x.data();
  return ad::make_result("grl", x.shape(), {d.begin(), d.end()}, {x},
                         [lambda_grl](const Tensor& g, const std::vector<bool>&) {
                           return std::vector<Tensor>{ad::mul(g, -lambda_grl)};
                         });
}

Tensor ls_domain_loss(const Tensor& pred, DomainLabel label) {
  if (pred.numel() == 0) throw ContractViolation("ls_domain_loss: empty prediction");
  Tensor p = ad::sigmoid(pred);
  if (label == DomainLabel::kSource) {
    Tensor miss = ad::sub(Tensor::full(p.shape(), 1.0), p);
    return ad::mean(ad::mul(miss, miss));
  }
  return ad::mean(ad::mul(p, p));
}

Tensor softmax_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) { return ad::smooth_l1(pred, target); }

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.dim() != 3 || bias.shape() != Shape{x.size(0)}) {
    throw ContractViolation("add_channel_bias: bias " + ad::shape_str(bias.shape()) +
                            " for map " + ad::shape_str(x.shape()));
  }
  return ad::add(x, ad::broadcast_to(ad::reshape(bias, {x.size(0), 1, 1}), x.shape()));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = ad::matmul(x, weight);
  return ad::add(y, ad::broadcast_to(bias, y.shape()));
}

Tensor dropout(const Tensor& x, double keep, std::mt19937_64& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) throw ContractViolation("dropout: keep must be in (0,1]");
  if (keep == 1.0) return x;
  std::bernoulli_distribution draw(keep);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = draw(rng) ? 1.0 / keep : 0.0;
  return ad::mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

LayerSpec LayerSpec::conv(std::size_t kernel, std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.kernel = kernel;
  s.outputs = channels;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::kFullyConnected;
  s.outputs = units;
  return s;
}

LayerSpec LayerSpec::relu() { return {}; }

LayerSpec LayerSpec::dropout(double keep) {
  LayerSpec s;
  s.kind = LayerKind::kDropout;
  s.keep = keep;
  return s;
}

LayerSpec LayerSpec::pool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::kPool;
  s.kernel = window;
  return s;
}

LayerSpec LayerSpec::grl(double weight) {
  LayerSpec s;
  s.kind = LayerKind::kGrl;
  s.grl_weight = weight;
  return s;
}

namespace {

void validate(const LayerSpec& s, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + ": ";
  switch (s.kind) {
    case LayerKind::kConv:
      if (s.kernel == 0 || s.kernel % 2 == 0 || s.outputs == 0) {
        throw ContractViolation(where + "conv needs an odd positive kernel and channels");
      }
      break;
    case LayerKind::kFullyConnected:
      if (s.outputs == 0) throw ContractViolation(where + "fc needs positive units");
      break;
    case LayerKind::kDropout:
      if (!(s.keep > 0.0 && s.keep <= 1.0)) {
        throw ContractViolation(where + "dropout keep-probability must be in (0,1]");
      }
      break;
    case LayerKind::kPool:
      if (s.kernel == 0) throw ContractViolation(where + "pool needs a positive window");
      break;
    case LayerKind::kGrl:
      if (!(s.grl_weight >= 0.0)) throw ContractViolation(where + "GRL weight must be >= 0");
      break;
    case LayerKind::kRelu:
      break;
  }
}

}  // namespace

Sequential::Sequential(std::vector<LayerSpec> specs, Shape input_shape, std::string prefix)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)), prefix_(std::move(prefix)) {
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    validate(s, i);
    in_shapes_.push_back(shape);
    const std::string where = prefix_ + " layer " + std::to_string(i) + ": ";
    switch (s.kind) {
      case LayerKind::kConv:
        if (shape.size() != 3) {
          throw ContractViolation(where + "conv expects a (C,H,W) input, got " +
                                  ad::shape_str(shape));
        }
        shape = {s.outputs, shape[1], shape[2]};
        break;
      case LayerKind::kFullyConnected:
        if (shape.size() != 2) {
          throw ContractViolation(where + "fc expects an (N,F) input, got " +
                                  ad::shape_str(shape));
        }
        shape = {shape[0], s.outputs};
        break;
      case LayerKind::kPool:
        if (shape.size() != 3 || shape[1] % s.kernel != 0 || shape[2] % s.kernel != 0) {
          throw ContractViolation(where + "pool window does not divide " + ad::shape_str(shape));
        }
        shape = {shape[0], shape[1] / s.kernel, shape[2] / s.kernel};
        break;
      default:
        break;
    }
  }
  output_shape_ = shape;
}

std::string Sequential::param_path(std::size_t layer, const char* name) const {
  return prefix_ + "/" + std::to_string(layer) + "/" + name;
}

ParameterSet Sequential::init(std::mt19937_64& rng) const {
  ParameterSet params;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    const Shape& in = in_shapes_[i];
    if (s.kind == LayerKind::kConv) {
      const std::size_t fan_in = in[0] * s.kernel * s.kernel;
      params.insert(param_path(i, "weight"),
                    uniform_init({s.outputs, in[0], s.kernel, s.kernel}, fan_in, rng));
      params.insert(param_path(i, "bias"), Tensor::zeros({s.outputs}));
    } else if (s.kind == LayerKind::kFullyConnected) {
      params.insert(param_path(i, "weight"), uniform_init({in[1], s.outputs}, in[1], rng));
      params.insert(param_path(i, "bias"), Tensor::zeros({s.outputs}));
    }
  }
  return params;
}

Tensor Sequential::forward(const ParameterSet& params, const Tensor& x, const ForwardContext& ctx,
                           std::size_t first_layer) const {
  const bool rows = input_shape_.size() == 2;
  if (x.dim() != input_shape_.size() ||
      (rows ? x.size(1) != input_shape_[1]
            : !std::equal(x.shape().begin(), x.shape().end(), input_shape_.begin()))) {
    throw ContractViolation(prefix_ + ": input " + ad::shape_str(x.shape()) +
                            " does not match " + ad::shape_str(input_shape_));
  }
  if (first_layer > specs_.size()) throw ContractViolation(prefix_ + ": layer out of range");
  const Shape& skipped_to = first_layer < specs_.size() ? in_shapes_[first_layer] : output_shape_;
  if (first_layer > 0 && skipped_to != input_shape_) {
    throw ContractViolation(prefix_ + ": can only skip shape-preserving layers");
  }
  Tensor h = x;
  for (std::size_t i = first_layer; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    switch (s.kind) {
      case LayerKind::kConv:
        h = add_channel_bias(ad::conv2d(h, params.at(param_path(i, "weight")), s.kernel / 2),
                             params.at(param_path(i, "bias")));
        break;
      case LayerKind::kFullyConnected:
        h = linear(h, params.at(param_path(i, "weight")), params.at(param_path(i, "bias")));
        break;
      case LayerKind::kRelu:
        h = ad::relu(h);
        break;
      case LayerKind::kDropout:
        if (ctx.training && s.keep < 1.0) {
          std::mt19937_64 rng(ctx.dropout_seed ^ (0x9E3779B97F4A7C15ULL * (i + 1)));
          h = dropout(h, s.keep, rng);
        }
        break;
      case LayerKind::kPool:
        h = ad::max_pool2d(h, s.kernel);
        break;
      case LayerKind::kGrl:
        h = grl_apply(h, s.grl_weight);
        break;
    }
  }
  return h;
}

void Sequential::set_grl_weight(double weight) {
  for (auto& s : specs_) {
    if (s.kind == LayerKind::kGrl) s.grl_weight = weight;
  }
}

Sequential build_discriminator(std::vector<LayerSpec> specs, Shape input_shape,
                               std::string prefix) {
  if (specs.empty() || specs.front().kind != LayerKind::kGrl) {
    throw ContractViolation("discriminator spec must begin with a gradient reversal layer");
  }
  return Sequential(std::move(specs), std::move(input_shape), std::move(prefix));
}

std::vector<LayerSpec> image_discriminator_spec(std::size_t width, double grl_weight) {
  return {LayerSpec::grl(grl_weight), LayerSpec::conv(1, width), LayerSpec::relu(),
          LayerSpec::conv(3, width),  LayerSpec::relu(),         LayerSpec::conv(3, width),
          LayerSpec::relu(),          LayerSpec::conv(3, 1)};
}

std::vector<LayerSpec> instance_discriminator_spec(std::size_t width, double keep,
                                                   double grl_weight) {
  return {LayerSpec::grl(grl_weight), LayerSpec::fc(width),     LayerSpec::relu(),
          LayerSpec::dropout(keep),   LayerSpec::fc(width),     LayerSpec::relu(),
          LayerSpec::dropout(keep),   LayerSpec::fc(1)};
}

}  // namespace metauda::nn
