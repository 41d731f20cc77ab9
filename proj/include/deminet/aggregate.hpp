#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "deminet/ops.hpp"
#include "deminet/params.hpp"

namespace deminet {

enum class AggregationMode { deminet, multi_avg, hard_routing, moe };

inline std::string_view mode_name(AggregationMode m) {
    switch (m) {
        case AggregationMode::deminet: return "deminet";
        case AggregationMode::multi_avg: return "multi_avg";
        case AggregationMode::hard_routing: return "hard_routing";
        case AggregationMode::moe: return "moe";
    }
    return "?";
}

inline AggregationMode parse_mode(std::string_view s) {
    if (s == "deminet") return AggregationMode::deminet;
    if (s == "multi_avg") return AggregationMode::multi_avg;
    if (s == "hard_routing") return AggregationMode::hard_routing;
    if (s == "moe") return AggregationMode::moe;
    throw ConfigError("unknown aggregation mode '" + std::string(s) + "'");
}

/// Interest experts: a private batch norm plus a three-layer scorer each,
/// emitting [non-click, click] logits, and one prototype row per expert.
struct ExpertParams {
    std::vector<BatchNorm1d> norms;
    std::vector<Mlp> nets;
    Tensor prototypes;  // [K x d]

    static ExpertParams create(std::size_t experts, std::size_t in_width, std::size_t h1, std::size_t h2, std::size_t d,
                               Rng& rng) {
        ExpertParams p;
        for (std::size_t k = 0; k < experts; ++k) {
            p.norms.push_back(BatchNorm1d::create(in_width));
            p.nets.push_back(Mlp::create({in_width, h1, h2, 2}, rng));
        }
        p.prototypes = glorot({experts, d}, d, experts, rng);
        return p;
    }

    std::size_t count() const { return nets.size(); }
    std::size_t in_width() const { return nets.front().in_width(); }

    void visit(const std::string& prefix, const TensorVisitor& fn) {
        for (std::size_t k = 0; k < nets.size(); ++k) {
            const std::string ek = prefix + "." + std::to_string(k);
            fn(ek + ".bn.gamma", norms[k].gamma);
            fn(ek + ".bn.beta", norms[k].beta);
            fn(ek + ".bn.running_mean", norms[k].running_mean);
            fn(ek + ".bn.running_var", norms[k].running_var);
            nets[k].visit(ek + ".mlp", fn);
        }
        fn(prefix + ".prototypes", prototypes);
    }
};

/// Maps [v_k || context] to a d-wide combination vector.
struct ConfiNetParams {
    Mlp net;

    static ConfiNetParams create(std::size_t in_width, std::size_t h1, std::size_t h2, std::size_t d, Rng& rng) {
        return ConfiNetParams{Mlp::create({in_width, h1, h2, d}, rng)};
    }

    void visit(const std::string& prefix, const TensorVisitor& fn) { net.visit(prefix, fn); }
};

/// Gating network of the mixture-of-experts baseline.
struct GateParams {
    Mlp net;

    static GateParams create(std::size_t in_width, std::size_t hidden, std::size_t experts, Rng& rng) {
        return GateParams{Mlp::create({in_width, hidden, experts}, rng)};
    }

    void visit(const std::string& prefix, const TensorVisitor& fn) { net.visit(prefix, fn); }
};

/// Per-expert logits for a batch: row b holds o_1 .. o_K, two logits each.
inline Tensor expert_scores(Tape& t, const Tensor& features, ExpertParams& experts, NormMode mode, real slope) {
    detail::require_matrix(features, "expert_scores");
    if (features.dim(1) != experts.in_width()) {
        throw DimensionError("expert_scores: input width " + std::to_string(features.dim(1)) + ", experts expect " +
                             std::to_string(experts.in_width()));
    }
    std::vector<Tensor> outs;
    outs.reserve(experts.count());
    for (std::size_t k = 0; k < experts.count(); ++k) {
        outs.push_back(mlp_forward(t, experts.nets[k], batchnorm_1d(t, features, experts.norms[k], mode), slope));
    }
    return concat_lastdim(t, outs);
}

/// omega = softmax_k(c_k . p_k / sqrt(d)) with c_k = ConfiNet([v_k || context]).
/// interests: [B x K*d] (flattened rows), context: [B x c].
inline Tensor confidence_weights(Tape& t, const Tensor& interests, const Tensor& context, const ConfiNetParams& confi,
                                 const Tensor& prototypes, real slope) {
    const std::size_t b = interests.dim(0), k = prototypes.dim(0), d = prototypes.dim(1);
    if (interests.dim(1) != k * d) {
        throw DimensionError("confidence_weights: interests " + shape_str(interests.shape()) + " vs prototypes " +
                             shape_str(prototypes.shape()));
    }
    const real inv_sqrt_d = real(1) / std::sqrt(real(d));
    std::vector<Tensor> scores;
    scores.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        Tensor input = concat_lastdim(t, {slice_cols(t, interests, r * d, d), context});
        Tensor c = mlp_forward(t, confi.net, input, slope);
        Tensor p = repeat_rows(t, slice_rows(t, prototypes, r, 1), b);
        scores.push_back(scale(t, sum_lastdim(t, mul(t, c, p)), inv_sqrt_d));
    }
    return softmax_lastdim(t, concat_lastdim(t, scores));
}

namespace detail {

inline void check_weight_rows(const Tensor& w, std::string_view op) {
    const std::size_t k = w.cols(), b = w.size() / k;
    for (std::size_t i = 0; i < b; ++i) {
        real s = 0;
        for (std::size_t j = 0; j < k; ++j) s += w[i * k + j];
        if (std::abs(s - real(1)) > real(1e-6)) {
            throw ContractError(std::string(op) + ": weights of row " + std::to_string(i) + " sum to " + std::to_string(s));
        }
    }
}

// sum_k w[:, k] * logits_k, logits packed as [B x 2K].
inline Tensor mix_logits(Tape& t, const Tensor& logits, const Tensor& w) {
    const std::size_t k = w.cols();
    if (logits.cols() != 2 * k || logits.size() / logits.cols() != w.size() / k) {
        throw DimensionError("aggregate: logits " + shape_str(logits.shape()) + " vs weights " + shape_str(w.shape()));
    }
    std::vector<Tensor> parts;
    for (std::size_t r = 0; r < k; ++r) parts.push_back(scale_rows(t, slice_cols(t, logits, 2 * r, 2), slice_cols(t, w, r, 1)));
    return add_n(t, parts);
}

inline Tensor as_batch(Tape& t, const Tensor& x, std::size_t width) {
    if (x.rank() == 2 && x.dim(1) == width) return x;
    return reshape(t, x, {x.size() / width, width});
}

}  // namespace detail

/// y = softmax(sum_k omega_k o_k). Accepts a batch ([B x 2K] logits with
/// [B x K] weights) or a single sample ([K x 2] logits with K weights).
inline Tensor aggregate_predict(Tape& t, const Tensor& logits, const Tensor& weights) {
    const std::size_t k = weights.cols() == logits.cols() / 2 ? weights.cols() : weights.size();
    Tensor w = detail::as_batch(t, weights, k);
    Tensor o = detail::as_batch(t, logits, 2 * k);
    detail::check_weight_rows(w, "aggregate_predict");
    return softmax_lastdim(t, detail::mix_logits(t, o, w));
}

/// Row-wise argmax of the confidence weights, lowest index on ties.
inline std::vector<std::size_t> hard_route(const Tensor& weights) {
    const std::size_t k = weights.cols(), b = weights.size() / k;
    std::vector<std::size_t> pick(b, 0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 1; j < k; ++j)
            if (weights[i * k + j] > weights[i * k + pick[i]]) pick[i] = j;
    return pick;
}

/// Group-2 baseline aggregators. `gate` is only read for moe, where the
/// gating network consumes `context`.
inline Tensor baseline_aggregate(Tape& t, const Tensor& logits, const Tensor& weights, AggregationMode mode,
                                 const Tensor& context = {}, const GateParams* gate = nullptr, real slope = real(0.01)) {
    const std::size_t k = weights.cols() == logits.cols() / 2 ? weights.cols() : weights.size();
    Tensor w = detail::as_batch(t, weights, k);
    Tensor o = detail::as_batch(t, logits, 2 * k);
    const std::size_t b = w.size() / k;
    switch (mode) {
        case AggregationMode::deminet: return aggregate_predict(t, o, w);
        case AggregationMode::multi_avg: {
            Tensor avg = Tensor::make_output({b, k}, std::vector<real>(b * k, real(1) / real(k)), false);
            return softmax_lastdim(t, detail::mix_logits(t, o, avg));
        }
        case AggregationMode::hard_routing: {
            const auto pick = hard_route(w);
            std::vector<real> onehot(b * k, real(0));
            for (std::size_t i = 0; i < b; ++i) onehot[i * k + pick[i]] = 1;
            Tensor sel = Tensor::make_output({b, k}, std::move(onehot), false);
            return softmax_lastdim(t, detail::mix_logits(t, o, sel));
        }
        case AggregationMode::moe: {
            if (gate == nullptr || !context.defined()) throw ConfigError("moe aggregation needs a gating network and context");
            Tensor g = softmax_lastdim(t, mlp_forward(t, gate->net, context, slope));
            if (g.cols() != k) throw DimensionError("moe: gate emits " + std::to_string(g.cols()) + " weights for " + std::to_string(k) + " experts");
            std::vector<Tensor> parts;
            for (std::size_t r = 0; r < k; ++r) {
                parts.push_back(scale_rows(t, softmax_lastdim(t, slice_cols(t, o, 2 * r, 2)), slice_cols(t, g, r, 1)));
            }
            return add_n(t, parts);
        }
    }
    throw ConfigError("unknown aggregation mode");
}

}  // namespace deminet
