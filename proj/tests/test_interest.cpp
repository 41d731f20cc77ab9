#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace deminet;
using testutil::random_tensor;
using testutil::to_vec;

namespace {

InterestParams random_params(std::size_t k, std::size_t d, std::size_t hidden, std::uint64_t seed) {
    Rng rng(seed);
    return InterestParams::create(k, d, hidden, rng);
}

void set(Tensor& t, std::vector<real> v) { std::copy(v.begin(), v.end(), t.mutable_values().begin()); }

}  // namespace

TEST(ExtractInterests, SingletonSequence) {
    auto p = random_params(4, 3, 5, 1);
    Tape t;
    auto h = Tensor::matrix(1, 3, {0.4, -1, 2});
    auto im = extract_interests(t, h, Tensor::from({3}, {1, 1, 1}), p, 1, real(0.01));
    EXPECT_EQ(im.attention.shape(), (Shape{4, 1}));
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(im.attention[k], 1);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(im.vectors.at(k, c), h.at(0, c));
    }
}

TEST(ExtractInterests, SharedEmbeddingIsReturnedByEveryRoute) {
    auto p = random_params(3, 2, 4, 2);
    Tape t;
    auto h = Tensor::matrix(4, 2, {0.5, -2, 0.5, -2, 0.5, -2, 0.5, -2});
    auto im = extract_interests(t, h, Tensor::from({2}, {3, 1}), p, 4, real(0.01));
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(im.vectors.at(k, 0), 0.5, 1e-14);
        EXPECT_NEAR(im.vectors.at(k, 1), -2, 1e-14);
    }
}

TEST(ExtractInterests, HandSetScorerMatchesScalarTranscription) {
    // One route, d = 2, hidden width 2: logit_i = w2 . leaky(W1^T [h_i || h_t] + b1) + b2.
    auto p = random_params(1, 2, 2, 3);
    auto& net = p.heads[0];
    set(net.weights[0], {1, 0, 0, 1, -1, 0.5, 0.5, 0});  // [4 x 2], row-major
    set(net.biases[0], {0.1, -0.2});
    set(net.weights[1], {2, -1});
    set(net.biases[1], {0.3});
    const real slope = real(0.1);
    const std::vector<real> hv{1, 2, -1, 0.5, 0, -3};
    const std::vector<real> ht{0.2, 0.4};
    Tape t;
    auto im = extract_interests(t, Tensor::matrix(3, 2, hv), Tensor::from({2}, ht), p, 3, slope);

    auto leaky = [&](real x) { return x >= 0 ? x : slope * x; };
    std::vector<real> logit(3);
    for (std::size_t i = 0; i < 3; ++i) {
        const real x[4] = {hv[2 * i], hv[2 * i + 1], ht[0], ht[1]};
        const real h0 = leaky(x[0] * 1 + x[1] * 0 + x[2] * -1 + x[3] * 0.5 + real(0.1));
        const real h1 = leaky(x[0] * 0 + x[1] * 1 + x[2] * 0.5 + x[3] * 0 - real(0.2));
        logit[i] = 2 * h0 - h1 + real(0.3);
    }
    real z = 0;
    for (real l : logit) z += std::exp(l);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(im.attention[i], std::exp(logit[i]) / z, 1e-12);
    for (std::size_t c = 0; c < 2; ++c) {
        real v = 0;
        for (std::size_t i = 0; i < 3; ++i) v += std::exp(logit[i]) / z * hv[2 * i + c];
        EXPECT_NEAR(im.vectors.at(0, c), v, 1e-12);
    }
}

TEST(ExtractInterests, PaddingPositionsAreIgnoredExactly) {
    auto p = random_params(3, 4, 6, 4);
    Rng rng(8);
    auto h = random_tensor({6, 4}, rng, 1.0, false);
    auto target = random_tensor({4}, rng, 1.0, false);
    Tape t;
    auto a = extract_interests(t, h, target, p, 4, real(0.01));
    auto changed = to_vec(h);
    for (std::size_t i = 4 * 4; i < changed.size(); ++i) changed[i] = real(100) + real(i);
    auto b = extract_interests(t, Tensor::matrix(6, 4, changed), target, p, 4, real(0.01));
    EXPECT_EQ(to_vec(a.vectors), to_vec(b.vectors));
    for (std::size_t k = 0; k < 3; ++k) {
        real s = 0;
        for (std::size_t i = 0; i < 6; ++i) s += a.attention.at(k, i);
        EXPECT_NEAR(s, 1, 1e-12);
        EXPECT_EQ(a.attention.at(k, 4), 0);
        EXPECT_EQ(a.attention.at(k, 5), 0);
    }
}

TEST(ExtractInterests, VectorsLieInConvexHullOfValidRows) {
    auto p = random_params(4, 5, 5, 5);
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        auto h = random_tensor({n, 5}, rng, 2.0, false);
        Tape t;
        auto im = extract_interests(t, h, random_tensor({5}, rng, 1.0, false), p, n, real(0.01));
        for (std::size_t c = 0; c < 5; ++c) {
            real lo = h.at(0, c), hi = h.at(0, c);
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, h.at(i, c));
                hi = std::max(hi, h.at(i, c));
            }
            for (std::size_t k = 0; k < 4; ++k) {
                EXPECT_GE(im.vectors.at(k, c), lo - 1e-12);
                EXPECT_LE(im.vectors.at(k, c), hi + 1e-12);
            }
        }
    }
}

TEST(ExtractInterests, UnnormalizedVariantUsesRawScores) {
    auto p = random_params(2, 3, 4, 6);
    Rng rng(10);
    auto h = random_tensor({4, 3}, rng, 1.0, false);
    auto target = random_tensor({3}, rng, 1.0, false);
    Tape t;
    auto raw = extract_interests(t, h, target, p, 4, real(0.01), false);
    auto scores = interest_scores(t, h, target, p, real(0.01));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(raw.attention.at(k, i), scores.at(k, i));
}

TEST(ExtractInterests, FusedScoresMatchGenericScorer) {
    auto p = random_params(3, 4, 5, 11);
    Rng rng(12);
    auto h = random_tensor({5, 4}, rng, 1.0, false);
    auto target = random_tensor({4}, rng, 1.0, false);
    Tape t;
    auto fused = interest_scores(t, h, target, p, real(0.05));
    auto pairs = concat_lastdim(t, {h, repeat_rows(t, reshape(t, target, {1, 4}), 5)});
    for (std::size_t k = 0; k < 3; ++k) {
        auto logits = mlp_forward(t, p.heads[k], pairs, real(0.05));
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(fused.at(k, i), logits[i], 1e-12);
    }
}

TEST(ExtractInterests, Errors) {
    auto p = random_params(2, 3, 4, 1);
    Tape t;
    auto h = Tensor::zeros({3, 3});
    EXPECT_THROW(extract_interests(t, h, Tensor::zeros({3}), p, 0, real(0.01)), EmptySequenceError);
    EXPECT_THROW(extract_interests(t, h, Tensor::zeros({3}), p, 4, real(0.01)), DimensionError);
    EXPECT_THROW(extract_interests(t, h, Tensor::zeros({2}), p, 3, real(0.01)), DimensionError);
}

TEST(ExtractInterests, GradientCheck) {
    auto p = random_params(3, 4, 5, 13);
    Rng rng(14);
    auto h = random_tensor({5, 4}, rng, 1.0, true);
    auto target = random_tensor({4}, rng, 1.0, true);
    std::vector<Tensor> inputs{h, target};
    p.visit("interest", [&](const std::string&, Tensor& x) { inputs.push_back(x); });
    std::vector<real> w(12);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = real(0.25) * real(i % 4) - real(0.3);
    for (bool normalize : {true, false}) {
        auto f = [&](Tape& t) {
            auto im = extract_interests(t, h, target, p, 4, real(0.05), normalize);
            return sum(t, mul(t, im.vectors, Tensor::from({3, 4}, w)));
        };
        EXPECT_LT(check_gradients(f, inputs, real(1e-6)), 1e-4) << (normalize ? "normalized" : "raw");
    }
}

TEST(InterestDistributions, ZeroAndConstantRowsAreUniform) {
    Tape t;
    auto p = interest_distributions(t, Tensor::matrix(2, 4, {0, 0, 0, 0, 7, 7, 7, 7}));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(p[i], 0.25, 1e-15);
}

TEST(InterestDistributions, IncreasingRow) {
    Tape t;
    auto p = interest_distributions(t, Tensor::matrix(1, 4, {1, 2, 3, 4}));
    const real expected[4] = {0.0321, 0.0871, 0.2369, 0.6439};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], expected[i], 1e-4);
}

TEST(InterestDistributions, ShiftInvariantPerRow) {
    Rng rng(15);
    auto v = random_tensor({3, 5}, rng, 1.0, false);
    auto shifted = to_vec(v);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 5; ++c) shifted[k * 5 + c] += real(k) * real(3.5) - 1;
    Tape t;
    auto a = interest_distributions(t, v), b = interest_distributions(t, Tensor::matrix(3, 5, shifted));
    for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}
