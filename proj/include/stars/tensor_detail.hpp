#pragma once

// Internal hooks for defining new recorded operations outside tensor.cpp.

#include "stars/tensor.hpp"

namespace stars::detail {

using Impl = std::shared_ptr<TensorImpl>;

Impl make_leaf(Shape shape, std::vector<double> data, bool requires_grad);

/// Record an op node; drops parents and the backward rule when no input
/// requires grad, so frozen forward passes build no graph.
Tensor make_node(Shape shape, std::vector<double> data, std::vector<Impl> parents,
                 std::function<void(TensorImpl&)> backprop, const char* op);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace stars::detail
