#pragma once

#include <string>
#include <vector>

#include "deminet/ops.hpp"
#include "deminet/params.hpp"

namespace deminet {

/// K independent two-layer scorers, each mapping [h_i* || h_t] to a logit.
struct InterestParams {
    std::vector<Mlp> heads;

    static InterestParams create(std::size_t routes, std::size_t d, std::size_t hidden, Rng& rng) {
        InterestParams p;
        for (std::size_t k = 0; k < routes; ++k) p.heads.push_back(Mlp::create({2 * d, hidden, 1}, rng));
        return p;
    }

    std::size_t routes() const { return heads.size(); }

    void visit(const std::string& prefix, const TensorVisitor& fn) {
        for (std::size_t k = 0; k < heads.size(); ++k) heads[k].visit(prefix + ".head" + std::to_string(k), fn);
    }
};

struct InterestMatrix {
    Tensor vectors;    // [K x d]
    Tensor attention;  // [K x n]; zero at padding positions. Not differentiable.
};

/// Route logits for every (route, position) pair: head k maps [h_i || h_t]
/// through its two-layer scorer. The target half of the first layer is
/// computed once per head. Returns [K x m].
inline Tensor interest_scores(Tape& t, const Tensor& rows, const Tensor& target, const InterestParams& params, real slope) {
    detail::require_matrix(rows, "interest_scores");
    const std::size_t m = rows.dim(0), d = rows.dim(1), k = params.heads.size();
    if (target.size() != d) throw DimensionError("interest_scores: target width differs from sequence width");
    for (const auto& h : params.heads) {
        if (h.weights.size() != 2 || h.weights[0].dim(0) != 2 * d || h.weights[1].dim(1) != 1) {
            throw DimensionError("interest_scores: scorer must map 2d -> hidden -> 1");
        }
    }
    const std::size_t da = params.heads.front().weights[0].dim(1);
    auto rv = rows.values();
    auto tv = target.values();
    std::vector<real> z(k * m * da), out(k * m);
    std::vector<real> tpart(da);
    for (std::size_t r = 0; r < k; ++r) {
        const auto w1 = params.heads[r].weights[0].values();
        const auto b1 = params.heads[r].biases[0].values();
        const auto w2 = params.heads[r].weights[1].values();
        const real b2 = params.heads[r].biases[1][0];
        for (std::size_t a = 0; a < da; ++a) tpart[a] = b1[a];
        for (std::size_t c = 0; c < d; ++c) {
            const real x = tv[c];
            const real* wrow = &w1[(d + c) * da];
            for (std::size_t a = 0; a < da; ++a) tpart[a] += x * wrow[a];
        }
        for (std::size_t i = 0; i < m; ++i) {
            real* zi = &z[(r * m + i) * da];
            for (std::size_t a = 0; a < da; ++a) zi[a] = tpart[a];
            for (std::size_t c = 0; c < d; ++c) {
                const real x = rv[i * d + c];
                const real* wrow = &w1[c * da];
                for (std::size_t a = 0; a < da; ++a) zi[a] += x * wrow[a];
            }
            real s = b2;
            for (std::size_t a = 0; a < da; ++a) s += (zi[a] >= 0 ? zi[a] : slope * zi[a]) * w2[a];
            out[r * m + i] = s;
        }
    }
    bool rg = detail::wants_grad(t, {&rows, &target});
    if (t.enabled())
        for (const auto& h : params.heads)
            for (std::size_t l = 0; l < 2; ++l) rg = rg || h.weights[l].requires_grad() || h.biases[l].requires_grad();
    Tensor y = detail::emit("interest_scores", {k, m}, std::move(out), rg);
    if (rg) {
        t.record("interest_scores", y, [rows, target, heads = params.heads, y, z = std::move(z), m, d, k, da, slope]() {
            auto gy = y.grad();
            auto rv = rows.values();
            auto tv = target.values();
            std::vector<real> grows(m * d, real(0)), gtarget(d, real(0)), gz(da), gzsum(da);
            for (std::size_t r = 0; r < k; ++r) {
                const auto& h = heads[r];
                const auto w1 = h.weights[0].values();
                const auto w2 = h.weights[1].values();
                std::vector<real> gw1(2 * d * da, real(0)), gw2(da, real(0));
                real gb2 = 0;
                std::fill(gzsum.begin(), gzsum.end(), real(0));
                for (std::size_t i = 0; i < m; ++i) {
                    const real g = gy[r * m + i];
                    const real* zi = &z[(r * m + i) * da];
                    gb2 += g;
                    for (std::size_t a = 0; a < da; ++a) {
                        const bool on = zi[a] >= 0;
                        gw2[a] += g * (on ? zi[a] : slope * zi[a]);
                        gz[a] = g * w2[a] * (on ? real(1) : slope);
                        gzsum[a] += gz[a];
                    }
                    for (std::size_t c = 0; c < d; ++c) {
                        const real x = rv[i * d + c];
                        const real* wrow = &w1[c * da];
                        real* gwrow = &gw1[c * da];
                        real acc = 0;
                        for (std::size_t a = 0; a < da; ++a) {
                            gwrow[a] += x * gz[a];
                            acc += gz[a] * wrow[a];
                        }
                        grows[i * d + c] += acc;
                    }
                }
                for (std::size_t c = 0; c < d; ++c) {
                    const real x = tv[c];
                    const real* wrow = &w1[(d + c) * da];
                    real* gwrow = &gw1[(d + c) * da];
                    real acc = 0;
                    for (std::size_t a = 0; a < da; ++a) {
                        gwrow[a] += x * gzsum[a];
                        acc += gzsum[a] * wrow[a];
                    }
                    gtarget[c] += acc;
                }
                if (h.weights[0].requires_grad()) detail::accumulate(h.weights[0], gw1);
                if (h.biases[0].requires_grad()) detail::accumulate(h.biases[0], gzsum);
                if (h.weights[1].requires_grad()) detail::accumulate(h.weights[1], gw2);
                if (h.biases[1].requires_grad()) h.biases[1].grad_mut()[0] += gb2;
            }
            if (rows.requires_grad()) detail::accumulate(rows, grows);
            if (target.requires_grad()) detail::accumulate(target, gtarget);
        });
    }
    return y;
}

/// Target-conditioned interest extraction. Head k scores every valid
/// position, normalizes the scores with a softmax over positions (or uses
/// them raw when `normalize` is false), and pools the rows of H* with them.
inline InterestMatrix extract_interests(Tape& t, const Tensor& h_star, const Tensor& target, const InterestParams& params,
                                        std::size_t valid_len, real slope, bool normalize = true) {
    detail::require_matrix(h_star, "extract_interests");
    const std::size_t n = h_star.dim(0), d = h_star.dim(1);
    if (valid_len == 0) throw EmptySequenceError("extract_interests: empty sequence");
    if (valid_len > n) throw DimensionError("extract_interests: valid length exceeds sequence length");
    if (target.size() != d) throw DimensionError("extract_interests: target width " + std::to_string(target.size()) + " != " + std::to_string(d));
    if (params.heads.empty()) throw ConfigError("extract_interests: no interest routes");

    const Tensor rows = valid_len == n ? h_star : slice_rows(t, h_star, 0, valid_len);
    Tensor scores = interest_scores(t, rows, target, params, slope);  // [K x valid]
    Tensor weights = normalize ? softmax_lastdim(t, scores) : scores;

    InterestMatrix im;
    im.vectors = matmul(t, weights, rows);
    const std::size_t k = params.heads.size();
    std::vector<real> a(k * n, real(0));
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t i = 0; i < valid_len; ++i) a[r * n + i] = weights[r * valid_len + i];
    im.attention = Tensor::make_output({k, n}, std::move(a), false);
    return im;
}

/// Dimension-level distributions: a softmax along each interest vector.
inline Tensor interest_distributions(Tape& t, const Tensor& interests) { return softmax_lastdim(t, interests); }

}  // namespace deminet
