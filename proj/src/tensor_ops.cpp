#include <algorithm>
#include <cmath>

#include "stars/tensor.hpp"
#include "stars/tensor_detail.hpp"

// Matrix, broadcasting-helper, reduction and row-softmax operations.

namespace stars {

using detail::Impl;
using detail::make_node;
using detail::TensorImpl;

namespace {

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_rowvec(const Tensor& x, const Tensor& v, const char* op) {
    require_2d(x, op);
    if (v.shape().size() != 1 || v.shape()[0] != x.cols())
        throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
}

void require_colvec(const Tensor& x, const Tensor& v, const char* op) {
    require_2d(x, op);
    if (v.shape().size() != 1 || v.shape()[0] != x.rows())
        throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw ShapeError("matmul: inner extents of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * k;
        double* crow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double apv = arow[p];
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += apv * brow[j];
        }
    }
    auto ai = a.impl(), bi = b.impl();
    return make_node(
        Shape{m, n}, std::move(out), {ai, bi},
        [ai, bi, m, k, n](TensorImpl& self) {
            const auto& g = self.grad;
            if (ai->requires_grad) {  // dA = dC * B^T
                auto& da = ai->grad_buf();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* grow = g.data() + i * n;
                        const double* brow = bi->data.data() + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + p] += acc;
                    }
            }
            if (bi->requires_grad) {  // dB = A^T * dC
                auto& db = bi->grad_buf();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = ai->data.data() + i * k;
                    const double* grow = g.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double apv = arow[p];
                        double* dbrow = db.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) dbrow[j] += apv * grow[j];
                    }
                }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto ai = a.impl();
    return make_node(
        Shape{n, m}, std::move(out), {ai},
        [ai, m, n](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) da[i * n + j] += self.grad[j * m + i];
        },
        "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    auto ai = a.impl();
    return make_node(
        std::move(shape), a.values(), {ai},
        [ai](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
        },
        "reshape");
}

Tensor stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack0: no tensors given");
    const Shape& inner = parts[0].shape();
    for (const auto& p : parts)
        if (p.shape() != inner)
            throw ShapeError("stack0: mismatched part shapes " + shape_str(inner) + " and " +
                             shape_str(p.shape()));
    const std::size_t chunk = parts[0].size();
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), inner.begin(), inner.end());
    std::vector<double> out;
    out.reserve(parts.size() * chunk);
    std::vector<Impl> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        impls.push_back(p.impl());
    }
    auto impls_copy = impls;
    return make_node(
        std::move(out_shape), std::move(out), std::move(impls),
        [impls_copy, chunk](TensorImpl& self) {
            for (std::size_t k = 0; k < impls_copy.size(); ++k) {
                auto& part = *impls_copy[k];
                if (!part.requires_grad) continue;
                auto& dp = part.grad_buf();
                const double* g = self.grad.data() + k * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dp[i] += g[i];
            }
        },
        "stack0");
}

// ---------------------------------------------------------------------------
// [B x C] against [C] (row vector) or [B] (column vector)

namespace {

enum class VecOp { add, mul, div };

Tensor rowvec_op(const Tensor& x, const Tensor& v, VecOp op, const char* name) {
    require_rowvec(x, v, name);
    const std::size_t b = x.rows(), c = x.cols();
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(b * c);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xe = xv[i * c + j];
            out[i * c + j] = op == VecOp::add ? xe + vv[j]
                             : op == VecOp::mul ? xe * vv[j]
                                                : xe / vv[j];
        }
    auto xi = x.impl(), vi = v.impl();
    return make_node(
        x.shape(), std::move(out), {xi, vi},
        [xi, vi, b, c, op](TensorImpl& self) {
            const auto& g = self.grad;
            if (xi->requires_grad) {
                auto& dx = xi->grad_buf();
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        const double ge = g[i * c + j];
                        dx[i * c + j] += op == VecOp::add ? ge
                                         : op == VecOp::mul ? ge * vi->data[j]
                                                            : ge / vi->data[j];
                    }
            }
            if (vi->requires_grad) {
                auto& dv = vi->grad_buf();
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        const double ge = g[i * c + j];
                        if (op == VecOp::add) dv[j] += ge;
                        else if (op == VecOp::mul) dv[j] += ge * xi->data[i * c + j];
                        else dv[j] -= ge * xi->data[i * c + j] / (vi->data[j] * vi->data[j]);
                    }
            }
        },
        name);
}

Tensor colvec_op(const Tensor& x, const Tensor& v, VecOp op, const char* name) {
    require_colvec(x, v, name);
    const std::size_t b = x.rows(), c = x.cols();
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(b * c);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xe = xv[i * c + j];
            out[i * c + j] = op == VecOp::mul ? xe * vv[i] : xe / vv[i];
        }
    auto xi = x.impl(), vi = v.impl();
    return make_node(
        x.shape(), std::move(out), {xi, vi},
        [xi, vi, b, c, op](TensorImpl& self) {
            const auto& g = self.grad;
            if (xi->requires_grad) {
                auto& dx = xi->grad_buf();
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        const double ge = g[i * c + j];
                        dx[i * c + j] += op == VecOp::mul ? ge * vi->data[i] : ge / vi->data[i];
                    }
            }
            if (vi->requires_grad) {
                auto& dv = vi->grad_buf();
                for (std::size_t i = 0; i < b; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double ge = g[i * c + j];
                        if (op == VecOp::mul) acc += ge * xi->data[i * c + j];
                        else acc -= ge * xi->data[i * c + j] / (vi->data[i] * vi->data[i]);
                    }
                    dv[i] += acc;
                }
            }
        },
        name);
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& v) { return rowvec_op(x, v, VecOp::add, "add_rowvec"); }
Tensor mul_rowvec(const Tensor& x, const Tensor& v) { return rowvec_op(x, v, VecOp::mul, "mul_rowvec"); }
Tensor div_rowvec(const Tensor& x, const Tensor& v) { return rowvec_op(x, v, VecOp::div, "div_rowvec"); }
Tensor mul_colvec(const Tensor& x, const Tensor& v) { return colvec_op(x, v, VecOp::mul, "mul_colvec"); }
Tensor div_colvec(const Tensor& x, const Tensor& v) { return colvec_op(x, v, VecOp::div, "div_colvec"); }

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
    if (a.size() == 0) throw DomainError("sum: empty reduction");
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    auto ai = a.impl();
    return make_node(
        Shape{1}, {acc}, {ai},
        [ai](TensorImpl& self) {
            const double g = self.grad[0];
            auto& da = ai->grad_buf();
            for (auto& d : da) d += g;
        },
        "sum");
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DomainError("mean: empty reduction");
    const double inv = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    auto ai = a.impl();
    return make_node(
        Shape{1}, {acc * inv}, {ai},
        [ai, inv](TensorImpl& self) {
            const double g = self.grad[0] * inv;
            auto& da = ai->grad_buf();
            for (auto& d : da) d += g;
        },
        "mean");
}

Tensor variance_biased(const Tensor& a) {
    const std::size_t n = a.size();
    if (n == 0) throw DomainError("variance_biased: empty reduction");
    const double inv = 1.0 / static_cast<double>(n);
    double mu = 0.0;
    for (double v : a.values()) mu += v;
    mu *= inv;
    double var = 0.0;
    for (double v : a.values()) var += (v - mu) * (v - mu);
    var *= inv;
    auto ai = a.impl();
    return make_node(
        Shape{1}, {var}, {ai},
        [ai, mu, inv](TensorImpl& self) {
            // d var / d x_i = 2 (x_i - mu) / n; the mu dependence cancels.
            const double g = self.grad[0];
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < da.size(); ++i)
                da[i] += g * 2.0 * (ai->data[i] - mu) * inv;
        },
        "variance_biased");
}

namespace {

void require_axis(const Tensor& a, int axis, const char* op) {
    require_2d(a, op);
    if (axis != 0 && axis != 1)
        throw DomainError(std::string(op) + ": axis must be 0 or 1, got " + std::to_string(axis));
}

}  // namespace

Tensor sum(const Tensor& a, int axis) {
    require_axis(a, axis, "sum");
    const std::size_t b = a.rows(), c = a.cols();
    const auto& av = a.values();
    const std::size_t out_n = axis == 0 ? c : b;
    std::vector<double> out(out_n, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += av[i * c + j];
    auto ai = a.impl();
    return make_node(
        Shape{out_n}, std::move(out), {ai},
        [ai, b, c, axis](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    da[i * c + j] += self.grad[axis == 0 ? j : i];
        },
        "sum_axis");
}

Tensor mean(const Tensor& a, int axis) {
    require_axis(a, axis, "mean");
    const double inv = 1.0 / static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return scalar_mul(sum(a, axis), inv);
}

Tensor variance_biased(const Tensor& a, int axis) {
    require_axis(a, axis, "variance_biased");
    const std::size_t b = a.rows(), c = a.cols();
    const auto& av = a.values();
    const std::size_t out_n = axis == 0 ? c : b;
    const std::size_t red_n = axis == 0 ? b : c;
    const double inv = 1.0 / static_cast<double>(red_n);
    std::vector<double> mu(out_n, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) mu[axis == 0 ? j : i] += av[i * c + j];
    for (auto& m : mu) m *= inv;
    std::vector<double> out(out_n, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t o = axis == 0 ? j : i;
            const double d = av[i * c + j] - mu[o];
            out[o] += d * d;
        }
    for (auto& v : out) v *= inv;
    auto ai = a.impl();
    return make_node(
        Shape{out_n}, std::move(out), {ai},
        [ai, b, c, axis, inv, mu](TensorImpl& self) {
            auto& da = ai->grad_buf();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t o = axis == 0 ? j : i;
                    da[i * c + j] +=
                        self.grad[o] * 2.0 * (ai->data[i * c + j] - mu[o]) * inv;
                }
        },
        "variance_biased_axis");
}

// ---------------------------------------------------------------------------
// row softmax family

Tensor softmax_rows(const Tensor& x, double temperature) {
    require_2d(x, "softmax_rows");
    if (!(temperature > 0.0)) throw ContractError("softmax_rows: temperature must be positive");
    const std::size_t b = x.rows(), c = x.cols();
    const auto& xv = x.values();
    const double invt = 1.0 / temperature;
    std::vector<double> out(b * c);
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv[i * c + j] * invt);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(xv[i * c + j] * invt - mx);
            z += out[i * c + j];
        }
        const double invz = 1.0 / z;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= invz;
    }
    auto xi = x.impl();
    return make_node(
        x.shape(), std::move(out), {xi},
        [xi, b, c, invt](TensorImpl& self) {
            auto& dx = xi->grad_buf();
            for (std::size_t i = 0; i < b; ++i) {
                const double* p = self.data.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
                for (std::size_t j = 0; j < c; ++j)
                    dx[i * c + j] += p[j] * (g[j] - dot) * invt;
            }
        },
        "softmax_rows");
}

Tensor log_softmax_rows(const Tensor& x, double temperature) {
    require_2d(x, "log_softmax_rows");
    if (!(temperature > 0.0))
        throw ContractError("log_softmax_rows: temperature must be positive");
    const std::size_t b = x.rows(), c = x.cols();
    const auto& xv = x.values();
    const double invt = 1.0 / temperature;
    std::vector<double> out(b * c);
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv[i * c + j] * invt);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(xv[i * c + j] * invt - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * invt - lse;
    }
    auto xi = x.impl();
    return make_node(
        x.shape(), std::move(out), {xi},
        [xi, b, c, invt](TensorImpl& self) {
            auto& dx = xi->grad_buf();
            for (std::size_t i = 0; i < b; ++i) {
                const double* l = self.data.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double gsum = 0.0;
                for (std::size_t j = 0; j < c; ++j) gsum += g[j];
                for (std::size_t j = 0; j < c; ++j)
                    dx[i * c + j] += (g[j] - std::exp(l[j]) * gsum) * invt;
            }
        },
        "log_softmax_rows");
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    require_2d(logits, "cross_entropy_with_logits");
    const std::size_t b = logits.rows(), c = logits.cols();
    if (labels.size() != b)
        throw ContractError("cross_entropy_with_logits: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(b) + " rows");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw ContractError("cross_entropy_with_logits: label " + std::to_string(l) +
                                " out of range [0," + std::to_string(c) + ")");
    const auto& xv = logits.values();
    double total = 0.0;
    std::vector<double> probs(b * c);  // cached for the backward rule
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(xv[i * c + j] - mx);
            z += probs[i * c + j];
        }
        const double invz = 1.0 / z;
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] *= invz;
        total += (mx + std::log(z)) - xv[i * c + labels[i]];
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    auto xi = logits.impl();
    return make_node(
        Shape{1}, {total * inv_b}, {xi},
        [xi, b, c, inv_b, probs, labels](TensorImpl& self) {
            const double g = self.grad[0] * inv_b;
            auto& dx = xi->grad_buf();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double onehot = j == static_cast<std::size_t>(labels[i]) ? 1.0 : 0.0;
                    dx[i * c + j] += g * (probs[i * c + j] - onehot);
                }
        },
        "cross_entropy_with_logits");
}

}  // namespace stars
