// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "metauda/autodiff/tensor.hpp"

namespace metauda::ad {

/// Named trainable tensors addressed by stable slash-separated paths.
/// Iteration order is lexicographic by path.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void insert(const std::string& path, Tensor value);
  void set(const std::string& path, Tensor value);
  const Tensor& at(const std::string& path) const;
  bool contains(const std::string& path) const;
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::size_t parameter_count() const;
  std::vector<std::string> paths() const;

  /// Parameters whose path starts with prefix.
  ParameterSet subset(const std::string& prefix) const;
  /// Union; paths must be disjoint.
  void merge(const ParameterSet& other);

  /// Every tensor re-wrapped as a fresh leaf variable.
  ParameterSet as_variables() const;
  ParameterSet detached() const;

  bool same_values(const ParameterSet& other) const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

 private:
  Map tensors_;
};

/// Path → gradient tensor with the parameter's shape.
using Gradients = std::map<std::string, Tensor>;

/// Reverse-mode gradient of a scalar loss with respect to every tensor in
/// params. Parameters not reachable from loss get zeros. With create_record
/// the returned gradients carry their own differentiation history.
Gradients grad(const Tensor& loss, const ParameterSet& params,
               bool create_record = false);

/// Gradient with respect to arbitrary tensors, in argument order.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_record = false);

/// H·v by differentiating <grad(loss), v>.
Gradients hessian_vector_product(const Tensor& loss, const ParameterSet& params,
                                 const Gradients& v);

class OracleInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LossFn = std::function<double(const ParameterSet&)>;

/// Central differences (f(θ+eps) - f(θ-eps)) / (2 eps), one element at a time.
/// Throws OracleInvalid if loss_fn returns different values for equal input.
Gradients finite_diff_gradient(const LossFn& loss_fn, const ParameterSet& params,
                               double eps);

/// ‖a - b‖₂ / max(‖b‖₂, floor) over all paths in b.
double relative_error(const Gradients& a, const Gradients& b,
                      double floor = 1e-12);

/// Flattens gradients in path order.
std::vector<double> flatten(const Gradients& g);

}  // namespace metauda::ad
