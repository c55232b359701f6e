// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Elementwise binary ops require equal shapes;
// use broadcast_to for anything else.

#pragma once

#include <cstddef>
#include <vector>

#include "metauda/autodiff/tensor.hpp"

namespace metauda::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// 2-D matrix product op(a)·op(b) where op transposes when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

/// Stride-1 cross-correlation. x: (C,H,W), weight: (O,C,k,k).
Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t pad);
/// Adjoint of conv2d with respect to its input.
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight,
                         std::size_t pad, const Shape& input_shape);
/// Adjoint of conv2d with respect to its weight.
Tensor conv2d_grad_weight(const Tensor& x, const Tensor& grad_out,
                          std::size_t pad, std::size_t kernel);

/// Non-overlapping k×k max pooling over (C,H,W); H and W must divide by k.
/// Ties resolve to the first element in row-major order.
Tensor max_pool2d(const Tensor& x, std::size_t k);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Row-wise softmax of a (N,K) tensor.
Tensor softmax_rows(const Tensor& logits);

/// Mean over rows of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels);
/// Mean over elements of the Huber-style smooth L1 with unit transition.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Numpy-style broadcast of x to shape.
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sum-reduction that inverts broadcast_to.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
/// Half-open [begin, end) slice along every axis.
Tensor slice(const Tensor& x, const std::vector<std::size_t>& begin,
             const std::vector<std::size_t>& end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// out[i] = x.flat[index[i]]; the adjoint of scatter_add.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& index,
              const Shape& out_shape);
/// out.flat[index[i]] += g[i]; the adjoint of gather.
Tensor scatter_add(const Tensor& g, const std::vector<std::size_t>& index,
                   const Shape& out_shape);

/// Selects rows of a 2-D tensor.
Tensor rows(const Tensor& x, const std::vector<std::size_t>& row_index);

/// Σ a·b over all elements.
Tensor dot(const Tensor& a, const Tensor& b);

}  // namespace metauda::ad
