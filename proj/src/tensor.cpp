#include "stars/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "stars/tensor_detail.hpp"

namespace stars {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace detail {

Impl make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape)
        if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    if (shape_size(shape) != data.size())
        throw ShapeError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return impl;
}

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Impl> parents,
                 std::function<void(TensorImpl&)> backprop, const char* op) {
    auto impl = make_leaf(std::move(shape), std::move(data), false);
    impl->op = op;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backprop = std::move(backprop);
    }
    return Tensor(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
}

}  // namespace detail

using detail::Impl;
using detail::make_node;
using detail::TensorImpl;

// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(detail::make_leaf(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (shape().size() != 2)
        throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (shape().size() != 2)
        throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[1];
}

double Tensor::value() const {
    if (!is_scalar())
        throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty())
        throw ContractError("grad(): no gradient present (did backward() run?)");
    return impl_->grad;
}

Tensor Tensor::detached() const { return Tensor(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------
// Tape / backward

Tape Tape::record(const Tensor& root) {
    Tape tape;
    tape.root_ = root.impl();
    // Iterative post-order DFS over parents: every node lands after the nodes
    // it consumes, giving the topological order backward needs.
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        auto& top = stack.back();
        TensorImpl* node = top.first;
        if (top.second < node->parents.size()) {
            TensorImpl* p = node->parents[top.second].get();
            ++top.second;
            if (!visited.count(p) && p->requires_grad) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

void Tape::run_backward() {
    root_->grad_buf();
    std::fill(root_->grad.begin(), root_->grad.end(), 0.0);
    root_->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

void backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward(): loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    if (loss.impl()->backward_consumed)
        throw ContractError("backward(): already called on this loss; rebuild the graph first");
    Tape tape = Tape::record(loss);
    tape.run_backward();
    loss.impl()->backward_consumed = true;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

enum class BinOp { add, sub, mul };

double bin_eval(BinOp op, double x, double y) {
    switch (op) {
        case BinOp::add: return x + y;
        case BinOp::sub: return x - y;
        default: return x * y;
    }
}

Tensor binary_same_shape(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    detail::check_same_shape(a, b, name);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = bin_eval(op, av[i], bv[i]);
    auto ai = a.impl(), bi = b.impl();
    return make_node(
        a.shape(), std::move(out), {ai, bi},
        [ai, bi, op](TensorImpl& self) {
            const auto& g = self.grad;
            if (ai->requires_grad) {
                auto& da = ai->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] += op == BinOp::mul ? g[i] * bi->data[i] : g[i];
            }
            if (bi->requires_grad) {
                auto& db = bi->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (op == BinOp::add) db[i] += g[i];
                    else if (op == BinOp::sub) db[i] -= g[i];
                    else db[i] += g[i] * ai->data[i];
                }
            }
        },
        name);
}

// One operand has a single element: broadcast it against the other.
Tensor binary_scalar_broadcast(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const bool a_small = a.size() == 1;
    const Tensor& big = a_small ? b : a;
    const Tensor& small = a_small ? a : b;
    const auto& xv = big.values();
    const double s = small.values()[0];
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = a_small ? bin_eval(op, s, xv[i]) : bin_eval(op, xv[i], s);
    auto bigi = big.impl(), smalli = small.impl();
    return make_node(
        big.shape(), std::move(out), {bigi, smalli},
        [bigi, smalli, op, a_small](TensorImpl& self) {
            const auto& g = self.grad;
            const double s = smalli->data[0];
            if (bigi->requires_grad) {
                auto& dbig = bigi->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (op == BinOp::mul) dbig[i] += g[i] * s;
                    else if (op == BinOp::sub && a_small) dbig[i] -= g[i];
                    else dbig[i] += g[i];
                }
            }
            if (smalli->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (op == BinOp::mul) acc += g[i] * bigi->data[i];
                    else if (op == BinOp::sub && !a_small) acc -= g[i];
                    else acc += g[i];
                }
                smalli->grad_buf()[0] += acc;
            }
        },
        name);
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    if ((a.size() == 1) != (b.size() == 1))
        return binary_scalar_broadcast(a, b, op, name);
    return binary_same_shape(a, b, op, name);
}

Tensor unary(const Tensor& a, const char* name, double (*fwd)(double),
             double (*dfdx)(double x, double y)) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto ai = a.impl();
    return make_node(
        a.shape(), std::move(out), {ai},
        [ai, dfdx](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                da[i] += self.grad[i] * dfdx(ai->data[i], self.data[i]);
        },
        name);
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor scalar_mul(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    auto ai = a.impl();
    return make_node(
        a.shape(), std::move(out), {ai},
        [ai, c](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * c;
        },
        "scalar_mul");
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    auto ai = a.impl();
    return make_node(
        a.shape(), std::move(out), {ai},
        [ai](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
        },
        "add_scalar");
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.values())
        if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    return unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.values())
        if (v < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v));
    return unary(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& a, double lo) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] < lo ? lo : av[i];
    auto ai = a.impl();
    return make_node(
        a.shape(), std::move(out), {ai},
        [ai, lo](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (ai->data[i] >= lo) da[i] += self.grad[i];
        },
        "clamp_min");
}

Tensor identity(const Tensor& a) {
    auto ai = a.impl();
    return make_node(
        a.shape(), a.values(), {ai},
        [ai](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
        },
        "identity");
}

Tensor surrogate_step(const Tensor& x, double alpha) {
    if (!(alpha > 0.0)) throw ContractError("surrogate_step: alpha must be positive");
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] >= 0.0 ? 1.0 : 0.0;
    auto xi = x.impl();
    return make_node(
        x.shape(), std::move(out), {xi},
        [xi, alpha](TensorImpl& self) {
            auto& dx = xi->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = sigmoid_scalar(alpha * xi->data[i]);
                dx[i] += self.grad[i] * alpha * s * (1.0 - s);
            }
        },
        "surrogate_step");
}

Tensor smooth_step(const Tensor& x, double alpha) {
    if (!(alpha > 0.0)) throw ContractError("smooth_step: alpha must be positive");
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sigmoid_scalar(alpha * xv[i]);
    auto xi = x.impl();
    return make_node(
        x.shape(), std::move(out), {xi},
        [xi, alpha](TensorImpl& self) {
            auto& dx = xi->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = self.data[i];
                dx[i] += self.grad[i] * alpha * s * (1.0 - s);
            }
        },
        "smooth_step");
}

}  // namespace stars
