// SPDX-License-Identifier: Apache-2.0

#include "metauda/train/meta.hpp"

#include <cmath>

#include "metauda/autodiff/ops.hpp"

namespace metauda::train {

std::string to_string(MetaMode mode) { return mode == MetaMode::kExact ? "exact" : "first-order"; }
std::string to_string(InnerStyle style) {
  return style == InnerStyle::kRestart ? "restart" : "chained";
}

MetaMode meta_mode_from_string(const std::string& name) {
  if (name == "exact") return MetaMode::kExact;
  if (name == "first-order") return MetaMode::kFirstOrder;
  throw ad::ContractViolation("unknown meta mode '" + name + "' (exact|first-order)");
}

InnerStyle inner_style_from_string(const std::string& name) {
  if (name == "restart") return InnerStyle::kRestart;
  if (name == "chained") return InnerStyle::kChained;
  throw ad::ContractViolation("unknown inner style '" + name + "' (restart|chained)");
}

namespace {

void check_finite(const Gradients& g, const char* where) {
  for (const auto& [path, t] : g) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw ad::NumericFault(where, std::string(where) + ": non-finite gradient at " + path);
    }
  }
}

void check_settings(const MetaSettings& s) {
  if (!(s.alpha >= 0.0) || !std::isfinite(s.alpha)) throw ad::ContractViolation("meta: alpha must be >= 0");
  if (s.m < 1) throw ad::ContractViolation("meta: m must be >= 1");
}

void accumulate(Gradients& into, const Gradients& g) {
  ad::NoGradGuard off;
  for (const auto& [path, t] : g) {
    auto it = into.find(path);
    if (it == into.end()) {
      into.emplace(path, t.detach());
    } else {
      it->second = ad::add(it->second, t);
    }
  }
}

}  // namespace

ParameterSet inner_step(const ParameterSet& theta, const Tensor& train_loss, double alpha,
                        bool keep_record) {
  const Gradients g = ad::grad(train_loss, theta, keep_record);
  check_finite(g, "inner_step");
  std::unique_ptr<ad::NoGradGuard> off;
  if (!keep_record) off = std::make_unique<ad::NoGradGuard>();
  ParameterSet out;
  for (const auto& [path, t] : theta) {
    out.insert(path, ad::sub(t, ad::mul(g.at(path), alpha)));
  }
  return out;
}

MetaGradientResult meta_gradient(const ParameterSet& theta, const MetaObjective& objective,
                                 const MetaSettings& settings) {
  check_settings(settings);
  MetaGradientResult result;
  const ParameterSet vars = theta.as_variables();

  if (settings.mode == MetaMode::kFirstOrder) {
    // ∇θ' stands in for ∇θ, so each step's graph can go as soon as its
    // validation gradient is taken.
    ParameterSet base = theta.detached();
    for (std::size_t i = 0; i < settings.m; ++i) {
      ad::GradRecord record("inner " + std::to_string(i));
      const ParameterSet at = base.as_variables();
      const Tensor l_train = objective.train_loss(at, i);
      const ParameterSet adapted = inner_step(at, l_train, settings.alpha, false).as_variables();
      const Tensor l_val = objective.val_loss(adapted, i);
      accumulate(result.grad, ad::grad(l_val, adapted));
      result.train_losses.push_back(l_train.item());
      result.val_losses.push_back(l_val.item());
      result.meta_loss += l_val.item();
      if (settings.inner_style == InnerStyle::kChained) base = adapted.detached();
    }
    check_finite(result.grad, "meta_gradient");
    return result;
  }

  Tensor meta_loss;
  {
    ParameterSet base = vars;
    for (std::size_t i = 0; i < settings.m; ++i) {
      ad::GradRecord record("inner " + std::to_string(i));
      const Tensor l_train = objective.train_loss(base, i);
      ParameterSet adapted = inner_step(base, l_train, settings.alpha, true);
      const Tensor l_val = objective.val_loss(adapted, i);
      result.train_losses.push_back(l_train.item());
      result.val_losses.push_back(l_val.item());
      meta_loss = i == 0 ? l_val : ad::add(meta_loss, l_val);
      if (settings.inner_style == InnerStyle::kChained) base = std::move(adapted);
    }
  }
  result.meta_loss = meta_loss.item();
  {
    ad::GradRecord record("outer");
    result.grad = ad::grad(meta_loss, vars);
  }
  check_finite(result.grad, "meta_gradient");
  return result;
}

double meta_objective(const ParameterSet& theta, const MetaObjective& objective,
                      const MetaSettings& settings) {
  check_settings(settings);
  // Inner gradients need a record even when the caller has recording off.
  ad::EnableGradGuard on;
  double total = 0.0;
  ParameterSet base = theta.detached();
  for (std::size_t i = 0; i < settings.m; ++i) {
    const ParameterSet at = base.as_variables();
    const ParameterSet adapted = inner_step(at, objective.train_loss(at, i), settings.alpha, false);
    ad::NoGradGuard off;
    total += objective.val_loss(adapted, i).item();
    if (settings.inner_style == InnerStyle::kChained) base = adapted.detached();
  }
  return total;
}

}  // namespace metauda::train
