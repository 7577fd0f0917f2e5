#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stars/errors.hpp"

namespace stars {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

namespace detail {

/// One recorded node of the computation graph. Leaves have no parents and no
/// backward rule; interior nodes hold references to their inputs plus a local
/// backward rule that scatters this node's gradient into the inputs' buffers.
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this node

    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backprop;  // nullptr for leaves
    const char* op = "leaf";
    bool backward_consumed = false;  // set on a root once backward() ran

    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats with an optional gradient slot.
/// Value-semantics handle: copying a Tensor aliases the underlying node.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->data.size(); }
    bool is_scalar() const { return size() == 1; }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& values() const { return impl_->data; }
    /// Mutable access to the raw values. Intended for leaves (parameters,
    /// optimizable inputs); mutating an interior node invalidates its graph.
    std::vector<double>& mutable_values() { return impl_->data; }
    double value() const;
    double at(std::size_t i) const { return impl_->data.at(i); }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Value copy detached from any graph.
    Tensor detached() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Topologically ordered list of the nodes reachable from a root; the record
/// of operations that backward() replays in reverse. Every node appears
/// exactly once and only after all of its inputs.
class Tape {
public:
    static Tape record(const Tensor& root);
    std::size_t node_count() const { return order_.size(); }
    /// Reverse sweep: seeds the root with d(root)/d(root) = 1 and runs each
    /// node's backward rule exactly once.
    void run_backward();

private:
    std::vector<detail::TensorImpl*> order_;  // inputs before consumers
    std::shared_ptr<detail::TensorImpl> root_;
};

/// Reverse-mode gradient of a scalar loss with respect to every
/// requires_grad leaf it depends on. Calling backward twice on the same root
/// without rebuilding the graph is a contract error.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or scalar vs tensor
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);     // subgradient 0 at exactly 0
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);      // domain error on non-positive input
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);     // domain error on negative input
Tensor clamp_min(const Tensor& a, double lo);  // zero gradient where clamped
Tensor identity(const Tensor& a);              // recorded no-op

// ---- shape / linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor stack0(const std::vector<Tensor>& parts);  // k tensors [a...] -> [k,a...]

// ---- broadcasting helpers for [B x C] with [C] or [B] ----
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // x[b,c] + v[c]
Tensor mul_rowvec(const Tensor& x, const Tensor& v);  // x[b,c] * v[c]
Tensor div_rowvec(const Tensor& x, const Tensor& v);  // x[b,c] / v[c]
Tensor mul_colvec(const Tensor& x, const Tensor& v);  // x[b,c] * v[b]
Tensor div_colvec(const Tensor& x, const Tensor& v);  // x[b,c] / v[b]

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor variance_biased(const Tensor& a);           // divisor n (BN convention)
Tensor sum(const Tensor& a, int axis);             // 2-D only, axis 0 or 1
Tensor mean(const Tensor& a, int axis);
Tensor variance_biased(const Tensor& a, int axis);

// ---- rows of logits ----
Tensor softmax_rows(const Tensor& x, double temperature);
Tensor log_softmax_rows(const Tensor& x, double temperature);
/// Mean cross-entropy of softmax(logits) against integer labels.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

// ---- spiking nonlinearities ----
/// Exact Heaviside step 1(x >= 0) forward; scaled sigmoid-derivative
/// alpha * s(alpha x) (1 - s(alpha x)) backward.
Tensor surrogate_step(const Tensor& x, double alpha);
/// Fully smoothed variant: s(alpha x) forward with its true derivative.
/// Used by gradient checks, where the exact-step forward is discontinuous.
Tensor smooth_step(const Tensor& x, double alpha);

}  // namespace stars
