#pragma once

#include <cstdint>
#include <vector>

#include "deminet/deminet.hpp"

namespace testutil {

using deminet::real;
using deminet::Rng;
using deminet::Tensor;

inline Tensor random_tensor(deminet::Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
    std::vector<real> v(deminet::shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(rng.normal(0.0, scale));
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<real> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// A small model config over a toy vocabulary.
inline deminet::ModelConfig tiny_config(std::size_t items = 12, std::size_t cats = 4) {
    deminet::ModelConfig c;
    c.num_items = items;
    c.num_categories = cats;
    c.d = 8;
    c.heads = 2;
    c.layers = 2;
    c.routes = 3;
    c.n_max = 6;
    c.interest_hidden = 4;
    c.expert_hidden1 = 8;
    c.expert_hidden2 = 4;
    c.confi_hidden1 = 8;
    c.confi_hidden2 = 4;
    c.gate_hidden = 4;
    c.epsilon = 2;
    c.threshold = real(0.3);
    c.rho = real(0.4);
    c.beta = real(0.5);
    c.embedding_std = real(0.5);
    return c;
}

/// Random sample with a history of length `n` over the toy vocabulary.
inline deminet::Sample random_sample(Rng& rng, std::size_t n, std::size_t items, std::size_t cats, int label) {
    deminet::Sample s;
    s.user = 1;
    for (std::size_t i = 0; i < n; ++i) {
        s.items.push_back(static_cast<std::uint32_t>(1 + rng.below(items - 1)));
        s.categories.push_back(static_cast<std::uint32_t>(1 + rng.below(cats - 1)));
    }
    s.target_item = static_cast<std::uint32_t>(1 + rng.below(items - 1));
    s.target_category = static_cast<std::uint32_t>(1 + rng.below(cats - 1));
    s.label = label;
    return s;
}

}  // namespace testutil
