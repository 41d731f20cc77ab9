#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "deminet/tensor.hpp"

namespace deminet {

struct AdamConfig {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
};

/// Adam with bias correction. Parameters without a gradient buffer are
/// treated as having a zero gradient for the step.
class Adam {
  public:
    Adam(AdamConfig cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), real(0));
            v_.emplace_back(p.size(), real(0));
        }
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;
            for (real g : params_[i].grad()) {
                if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
            }
        }
        ++steps_;
        const real bc1 = real(1) - std::pow(cfg_.beta1, real(steps_));
        const real bc2 = real(1) - std::pow(cfg_.beta2, real(steps_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto w = params_[i].mutable_values();
            const bool has = params_[i].has_grad();
            auto g = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                const real gj = has ? g[j] : real(0);
                m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
                const real mhat = m[j] / bc1;
                const real vhat = v[j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::size_t steps() const { return steps_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<real>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<real>& second_moment(std::size_t i) const { return v_[i]; }

  private:
    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<real>> m_, v_;
    std::size_t steps_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline real clip_grad_norm(const std::vector<Tensor>& params, real max_norm) {
    real sq = 0;
    for (const auto& p : params)
        if (p.has_grad())
            for (real g : p.grad()) sq += g * g;
    const real norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const real s = max_norm / norm;
        for (const auto& p : params)
            if (p.has_grad())
                for (auto& g : p.grad_mut()) g *= s;
    }
    return norm;
}

}  // namespace deminet
