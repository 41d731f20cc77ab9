#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "deminet/ops.hpp"

namespace deminet {

inline constexpr real kProbClamp = real(1e-7);

inline real clamp_prob(real p) { return std::clamp(p, kProbClamp, real(1) - kProbClamp); }

/// Binary cross-entropy of one prediction.
inline real ce_loss(real p_click, int label) {
    const real p = clamp_prob(p_click);
    return label ? -std::log(p) : -std::log(real(1) - p);
}

/// Mean binary cross-entropy over a batch of [non-click, click] probability
/// rows. Clamped entries receive no gradient.
inline Tensor bce_mean(Tape& t, const Tensor& probs, std::span<const int> labels) {
    detail::require_matrix(probs, "bce_mean");
    const std::size_t b = probs.dim(0);
    if (probs.dim(1) != 2 || labels.size() != b) {
        throw DimensionError("bce_mean: probabilities " + shape_str(probs.shape()) + " for " + std::to_string(labels.size()) + " labels");
    }
    real total = 0;
    for (std::size_t i = 0; i < b; ++i) total += ce_loss(probs[i * 2 + 1], labels[i]);
    const bool rg = detail::wants_grad(t, {&probs});
    Tensor y = detail::emit("bce_mean", {1}, {total / real(b)}, rg);
    if (rg) {
        std::vector<int> lab(labels.begin(), labels.end());
        t.record("bce_mean", y, [probs, y, lab = std::move(lab), b]() {
            const real g = y.grad()[0] / real(b);
            auto gp = probs.grad_mut();
            for (std::size_t i = 0; i < b; ++i) {
                const real p = probs[i * 2 + 1];
                if (p <= kProbClamp || p >= real(1) - kProbClamp) continue;
                gp[i * 2 + 1] += g * (lab[i] ? -real(1) / p : real(1) / (real(1) - p));
            }
        });
    }
    return y;
}

inline real kl_divergence(std::span<const real> p, std::span<const real> q) {
    real s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

/// Per-route self-supervised loss between two views' distributions:
/// 0.5 KL(P'||P'') + 0.5 KL(P''||P') for each row.
inline std::vector<real> ssl_loss(std::span<const real> p1, std::span<const real> p2, std::size_t width) {
    if (p1.size() != p2.size() || width == 0 || p1.size() % width != 0) throw DimensionError("ssl_loss: distribution shapes differ");
    std::vector<real> out;
    for (std::size_t off = 0; off < p1.size(); off += width) {
        auto a = p1.subspan(off, width);
        auto b = p2.subspan(off, width);
        out.push_back(real(0.5) * kl_divergence(a, b) + real(0.5) * kl_divergence(b, a));
    }
    return out;
}

/// Tape-recorded form over [K x d] distribution matrices; returns [K].
inline Tensor ssl_loss(Tape& t, const Tensor& p1, const Tensor& p2) {
    detail::require_same_shape(p1, p2, "ssl_loss");
    const std::size_t d = p1.cols(), k = p1.size() / d;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        if (!(p1[i] > 0 && p2[i] > 0)) throw NumericError("ssl_loss: distributions must be strictly positive");
    }
    auto vals = ssl_loss(p1.values(), p2.values(), d);
    const bool rg = detail::wants_grad(t, {&p1, &p2});
    Tensor y = detail::emit("ssl_loss", {k}, std::move(vals), rg);
    if (rg) {
        t.record("ssl_loss", y, [p1, p2, y, k, d]() {
            auto gy = y.grad();
            for (std::size_t r = 0; r < k; ++r) {
                const real g = gy[r];
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t i = r * d + c;
                    const real p = p1[i], q = p2[i];
                    const real lr = std::log(p / q);
                    if (p1.requires_grad()) p1.grad_mut()[i] += g * real(0.5) * (lr + 1 - q / p);
                    if (p2.requires_grad()) p2.grad_mut()[i] += g * real(0.5) * (-lr + 1 - p / q);
                }
            }
        });
    }
    return y;
}

inline real total_loss(real ce, std::span<const real> ssl, real beta) {
    if (beta < 0) throw ContractError("total_loss: beta must be non-negative");
    real s = 0;
    for (real v : ssl) s += v;
    return ce + beta * s;
}

}  // namespace deminet
