// SPDX-License-Identifier: Apache-2.0

#include "metauda/autodiff/grad.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "metauda/autodiff/ops.hpp"

namespace metauda::ad {

void ParameterSet::insert(const std::string& path, Tensor value) {
  if (!tensors_.emplace(path, std::move(value)).second) {
    throw ContractViolation("duplicate parameter path " + path);
  }
}

void ParameterSet::set(const std::string& path, Tensor value) {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw ContractViolation("unknown parameter path " + path);
  if (it->second.shape() != value.shape()) {
    throw ContractViolation("shape change for parameter " + path);
  }
  it->second = std::move(value);
}

const Tensor& ParameterSet::at(const std::string& path) const {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw ContractViolation("unknown parameter path " + path);
  return it->second;
}

bool ParameterSet::contains(const std::string& path) const {
  return tensors_.count(path) != 0;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

std::vector<std::string> ParameterSet::paths() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [p, _] : tensors_) out.push_back(p);
  return out;
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [p, t] : tensors_) {
    if (p.compare(0, prefix.size(), prefix) == 0) out.insert(p, t);
  }
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [p, t] : other) insert(p, t);
}

ParameterSet ParameterSet::as_variables() const {
  ParameterSet out;
  for (const auto& [p, t] : tensors_) out.insert(p, t.as_variable());
  return out;
}

ParameterSet ParameterSet::detached() const {
  ParameterSet out;
  for (const auto& [p, t] : tensors_) out.insert(p, t.detach());
  return out;
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (const auto& [p, t] : tensors_) {
    if (!other.contains(p) || !t.same_values(other.at(p))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_record) {
  if (!loss.defined() || loss.numel() != 1 || !loss.shape().empty()) {
    throw ContractViolation("grad: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  std::vector<Tensor> result(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = Tensor::zeros(wrt[i].shape());
  if (!loss.requires_grad()) return result;

  std::unordered_set<const Node*> targets;
  for (const auto& t : wrt) {
    if (t.requires_grad()) targets.insert(t.node().get());
  }
  if (targets.empty()) return result;

  // Inputs always carry smaller ids than their consumers, so descending id
  // order is a valid reverse topological order.
  std::vector<Node*> nodes;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      const Node* child = in.node().get();
      if (child && seen.insert(child).second) stack.push_back(in.node().get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  std::unordered_map<const Node*, bool> leads_to_target;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    bool lead = targets.count(*it) != 0;
    for (const auto& in : (*it)->inputs) {
      if (in.node() && leads_to_target[in.node().get()]) lead = true;
    }
    leads_to_target[*it] = lead;
  }

  std::optional<NoGradGuard> no_grad;
  std::optional<EnableGradGuard> with_grad;
  if (create_record) {
    with_grad.emplace();
  } else {
    no_grad.emplace();
  }

  std::unordered_map<const Node*, Tensor> grads;
  grads[loss.node().get()] = Tensor::scalar(1.0);
  for (Node* n : nodes) {
    auto git = grads.find(n);
    if (git == grads.end() || !leads_to_target[n] || n->inputs.empty()) continue;
    Tensor g = git->second;
    std::vector<bool> needed(n->inputs.size());
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const auto& in = n->inputs[i];
      needed[i] = in.node() && leads_to_target[in.node().get()];
    }
    std::vector<Tensor> input_grads;
    try {
      input_grads = n->backward(g, needed);
    } catch (const NumericFault& fault) {
      throw NumericFault(n->op, "backward of " + n->op + ": " + fault.what());
    }
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!needed[i]) continue;
      const Tensor& ig = input_grads.at(i);
      if (!ig.defined()) continue;
      for (double v : ig.data()) {
        if (!std::isfinite(v)) {
          throw NumericFault(n->op, "non-finite gradient in backward of " + n->op);
        }
      }
      const Node* child = n->inputs[i].node().get();
      auto cit = grads.find(child);
      if (cit == grads.end()) {
        grads.emplace(child, ig);
      } else {
        cit->second = add(cit->second, ig);
      }
    }
    // Intermediate gradients are no longer needed once propagated, unless
    // the node itself is a requested target.
    if (!targets.count(n)) grads.erase(git);
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (!wrt[i].requires_grad()) continue;
    auto it = grads.find(wrt[i].node().get());
    if (it != grads.end()) result[i] = it->second;
  }
  return result;
}

Gradients grad(const Tensor& loss, const ParameterSet& params, bool create_record) {
  std::vector<Tensor> wrt;
  std::vector<std::string> paths;
  for (const auto& [p, t] : params) {
    paths.push_back(p);
    wrt.push_back(t);
  }
  auto gs = grad(loss, wrt, create_record);
  Gradients out;
  for (std::size_t i = 0; i < paths.size(); ++i) out.emplace(paths[i], std::move(gs[i]));
  return out;
}

Gradients hessian_vector_product(const Tensor& loss, const ParameterSet& params,
                                 const Gradients& v) {
  Gradients g;
  Tensor inner;
  {
    EnableGradGuard enable;
    g = grad(loss, params, /*create_record=*/true);
    for (const auto& [p, gp] : g) {
      auto it = v.find(p);
      if (it == v.end()) throw ContractViolation("hessian_vector_product: missing v for " + p);
      if (it->second.shape() != gp.shape()) {
        throw ContractViolation("hessian_vector_product: shape mismatch for " + p);
      }
      Tensor term = dot(gp, it->second.detach());
      inner = inner.defined() ? add(inner, term) : term;
    }
  }
  if (!inner.defined()) return {};
  return grad(inner, params, false);
}

Gradients finite_diff_gradient(const LossFn& loss_fn, const ParameterSet& params, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_diff_gradient: eps must be positive");
  NoGradGuard no_grad;
  ParameterSet base = params.detached();
  const double f0 = loss_fn(base);
  const double f1 = loss_fn(base);
  if (f0 != f1) {
    throw OracleInvalid("finite_diff_gradient: loss function is not deterministic");
  }
  Gradients out;
  for (const auto& [path, t] : base) {
    std::vector<double> g(t.numel());
    std::vector<double> values(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      ParameterSet probe = base;
      values[i] = saved + eps;
      probe.set(path, Tensor(t.shape(), values));
      const double up = loss_fn(probe);
      values[i] = saved - eps;
      probe.set(path, Tensor(t.shape(), values));
      const double down = loss_fn(probe);
      values[i] = saved;
      g[i] = (up - down) / (2.0 * eps);
    }
    out.emplace(path, Tensor(t.shape(), std::move(g)));
  }
  return out;
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (const auto& [_, t] : g) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

double relative_error(const Gradients& a, const Gradients& b, double floor) {
  double diff = 0.0, norm = 0.0;
  for (const auto& [p, tb] : b) {
    auto it = a.find(p);
    if (it == a.end() || it->second.shape() != tb.shape()) {
      throw ContractViolation("relative_error: gradient sets differ at " + p);
    }
    auto x = it->second.data();
    auto y = tb.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
      diff += (x[i] - y[i]) * (x[i] - y[i]);
      norm += y[i] * y[i];
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

}  // namespace metauda::ad
