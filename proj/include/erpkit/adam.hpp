#pragma once

#include <cmath>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/nn.hpp"

namespace erpkit {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Moments are laid out in
/// the order the parameters were registered, so updates are deterministic.
template <typename T>
class Adam {
public:
    Adam(const std::vector<Param<T>*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto* p : params) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    void step(const std::vector<Param<T>*>& params) {
        require(params.size() == m_.size(), "adam parameter list changed size");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Param<T>& p = *params[pi];
            require(p.grad.same_shape(p.value), "gradient shape does not match parameter");
            Tensor<T>& m = m_[pi];
            Tensor<T>& v = v_[pi];
            for (std::size_t i = 0; i < p.value.numel(); ++i) {
                const double g = double(p.grad[i]);
                const double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                p.value[i] = static_cast<T>(double(p.value[i]) -
                                            cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
                p.grad[i] = T(0);
            }
        }
    }

    long long step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long long step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace erpkit
