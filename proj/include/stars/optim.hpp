#pragma once

#include <cmath>
#include <vector>

#include "stars/tensor.hpp"

namespace stars {

/// Classical momentum gradient descent over a fixed list of leaf tensors.
class MomentumSgd {
public:
    MomentumSgd(std::vector<Tensor> params, double lr, double momentum)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
    }

    void step() {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& v = velocity_[k];
            auto& x = p.mutable_values();
            for (std::size_t i = 0; i < x.size(); ++i) {
                v[i] = momentum_ * v[i] + g[i];
                x[i] -= lr_ * v[i];
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_;
    double momentum_;
};

/// Adaptive-moment gradient descent with bias correction
/// (decay rates 0.9 / 0.999, eps 1e-8).
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& x = p.mutable_values();
            for (std::size_t i = 0; i < x.size(); ++i) {
                m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
                v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m_[k][i] / bc1;
                const double vhat = v_[k][i] / bc2;
                x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace stars
