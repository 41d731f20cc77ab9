#pragma once

#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "deminet/aggregate.hpp"
#include "deminet/data.hpp"
#include "deminet/hga.hpp"
#include "deminet/interest.hpp"
#include "deminet/losses.hpp"
#include "deminet/seqgraph.hpp"

namespace deminet {

enum class Pooling { mean, last };

struct ModelConfig {
    std::size_t num_items = 0;       // vocabulary sizes, padding slot included
    std::size_t num_categories = 0;
    std::size_t d = 16;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t routes = 4;
    std::size_t n_max = 20;
    std::size_t interest_hidden = 16;
    std::size_t expert_hidden1 = 64;
    std::size_t expert_hidden2 = 32;
    std::size_t confi_hidden1 = 64;
    std::size_t confi_hidden2 = 32;
    std::size_t gate_hidden = 32;
    std::size_t epsilon = 3;
    real threshold = real(0.7);
    real rho = real(0.6);
    real beta = real(0.1);
    real slope = real(0.01);
    real embedding_std = real(0.01);
    bool dha_off = false;
    bool single_expert = false;
    bool normalize_interest = true;
    Pooling pooling = Pooling::mean;
    AggregationMode mode = AggregationMode::deminet;

    std::size_t experts() const { return single_expert ? 1 : routes; }
    std::size_t context_width() const { return 3 * d; }  // sequence summary || target item || target category
    std::size_t feature_width() const { return routes * d + context_width(); }
    bool uses_confidence() const { return experts() > 1; }
    bool uses_ssl() const { return beta > 0 && !dha_off; }

    /// Every violated constraint, one message each.
    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (d == 0) v.push_back("d must be positive");
        if (heads == 0 || (d % heads) != 0) v.push_back("d must be divisible by heads");
        if (routes == 0) v.push_back("routes (K) must be >= 1");
        if (n_max == 0) v.push_back("n_max must be >= 1");
        if (epsilon == 0) v.push_back("epsilon must be >= 1");
        if (!(threshold >= -1 && threshold <= 1)) v.push_back("threshold must lie in [-1, 1]");
        if (!(rho >= 0 && rho <= 1)) v.push_back("rho must lie in [0, 1]");
        if (!(beta >= 0)) v.push_back("beta must be >= 0");
        if (!(slope > 0 && slope < 1)) v.push_back("leaky_slope must lie in (0, 1)");
        if (interest_hidden == 0 || expert_hidden1 == 0 || expert_hidden2 == 0 || confi_hidden1 == 0 ||
            confi_hidden2 == 0 || gate_hidden == 0)
            v.push_back("hidden widths must be positive");
        if (single_expert && mode != AggregationMode::deminet) v.push_back("single_expert requires aggregation = deminet");
        if (num_items < 2) v.push_back("item vocabulary is empty");
        if (num_categories < 2) v.push_back("category vocabulary is empty");
        return v;
    }

    void validate() const {
        const auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid model config:";
        for (const auto& s : v) msg += "\n  - " + s;
        throw ConfigError(msg);
    }
};

struct DemiNetParams {
    Tensor item_emb;  // [num_items x d]
    Tensor cat_emb;   // [num_categories x d]
    HgaParams hga;
    InterestParams interest;
    ExpertParams experts;
    std::optional<ConfiNetParams> confi;
    std::optional<GateParams> gate;

    static DemiNetParams create(const ModelConfig& c, Rng& rng) {
        c.validate();
        DemiNetParams p;
        p.item_emb = normal_init({c.num_items, c.d}, c.embedding_std, rng);
        p.cat_emb = normal_init({c.num_categories, c.d}, c.embedding_std, rng);
        p.hga = HgaParams::create(c.d, c.heads, c.layers, c.n_max, rng);
        p.interest = InterestParams::create(c.routes, c.d, c.interest_hidden, rng);
        p.experts = ExpertParams::create(c.experts(), c.feature_width(), c.expert_hidden1, c.expert_hidden2, c.d, rng);
        if (c.uses_confidence()) {
            p.confi = ConfiNetParams::create(c.d + c.context_width(), c.confi_hidden1, c.confi_hidden2, c.d, rng);
        }
        if (c.mode == AggregationMode::moe) p.gate = GateParams::create(c.context_width(), c.gate_hidden, c.experts(), rng);
        return p;
    }

    void visit(const TensorVisitor& fn) {
        fn("embedding.item", item_emb);
        fn("embedding.category", cat_emb);
        hga.visit("hga", fn);
        interest.visit("interest", fn);
        experts.visit("experts", fn);
        if (confi) confi->visit("confi", fn);
        if (gate) gate->visit("gate", fn);
    }

    /// Parameters updated by the optimizer (batch-norm running statistics excluded).
    std::vector<Tensor> trainable() {
        std::vector<Tensor> out;
        visit([&](const std::string&, Tensor& t) {
            if (t.requires_grad()) out.push_back(t);
        });
        return out;
    }

    std::vector<std::string> trainable_names() {
        std::vector<std::string> out;
        visit([&](const std::string& name, Tensor& t) {
            if (t.requires_grad()) out.push_back(name);
        });
        return out;
    }

    /// Deep copy with independent storage and no gradients.
    DemiNetParams clone() const {
        DemiNetParams c = *this;
        c.visit([](const std::string&, Tensor& t) { t = t.clone(); });
        return c;
    }
};

/// Seeds for the two edge-dropout views of one sample.
struct ViewSeeds {
    std::uint64_t first = 0;
    std::uint64_t second = 0;
};

/// Per-sample encoder output. `interests` is V flattened to [1 x K*d].
struct SampleEncoding {
    Tensor interests;
    Tensor summary;  // [1 x d]
    Tensor target;   // [1 x 2d]: item embedding || category embedding
    Tensor ssl;      // [K], undefined when no views were run
    InterestMatrix matrix;
    HeteroGraph graph;
};

namespace detail {

inline std::vector<std::size_t> widen(const std::vector<std::uint32_t>& ids) { return {ids.begin(), ids.end()}; }

inline InterestMatrix view_interests(Tape& t, const DemiNetParams& p, const ModelConfig& c, const HeteroGraph& g,
                                     const Tensor& h0, const Tensor& h_target, std::uint64_t seed) {
    const GraphView view = edge_dropout(g, c.rho, seed);
    const Tensor h = hga_forward(t, view, h0, p.hga, c.slope);
    return extract_interests(t, h, h_target, p.interest, h0.dim(0), c.slope, c.normalize_interest);
}

}  // namespace detail

/// Embeds one sample's history, builds its sequence graph, runs the graph
/// encoder and interest extraction on the full graph, and, when `views` is
/// given and the regularizer is active, on two edge-dropout views.
inline SampleEncoding encode_sample(Tape& t, const DemiNetParams& p, const ModelConfig& c, const Sample& s,
                                    const ViewSeeds* views = nullptr, HgaTrace* trace = nullptr) {
    const std::size_t n = s.items.size();
    if (n == 0) throw EmptySequenceError("encode_sample: empty behavior sequence");
    if (s.categories.size() != n) throw DimensionError("encode_sample: item and category sequences differ in length");
    if (n > c.n_max) {
        throw DimensionError("encode_sample: sequence length " + std::to_string(n) + " exceeds n_max " + std::to_string(c.n_max));
    }
    const auto items = detail::widen(s.items);
    const auto cats = detail::widen(s.categories);
    const std::size_t ti[1] = {s.target_item};
    const std::size_t tc[1] = {s.target_category};

    const Tensor h0 = add(t, gather_rows(t, p.item_emb, items), gather_rows(t, p.cat_emb, cats));
    const Tensor t_item = gather_rows(t, p.item_emb, ti);
    const Tensor t_cat = gather_rows(t, p.cat_emb, tc);
    const Tensor h_target = add(t, t_item, t_cat);

    SampleEncoding enc;
    enc.target = concat_lastdim(t, {t_item, t_cat});
    Tensor h_star;
    if (c.dha_off) {
        h_star = add(t, h0, slice_rows(t, p.hga.pos_emb, 0, n));
    } else {
        enc.graph = build_hetero_graph(h0.values(), n, c.d, c.epsilon, c.threshold);
        h_star = hga_forward(t, full_view(enc.graph), h0, p.hga, c.slope, trace);
    }
    enc.matrix = extract_interests(t, h_star, h_target, p.interest, n, c.slope, c.normalize_interest);
    enc.interests = reshape(t, enc.matrix.vectors, {1, c.routes * c.d});
    enc.summary = c.pooling == Pooling::mean ? mean_rows(t, h_star, n) : slice_rows(t, h_star, n - 1, 1);

    if (views != nullptr && c.uses_ssl()) {
        const InterestMatrix v1 = detail::view_interests(t, p, c, enc.graph, h0, h_target, views->first);
        const InterestMatrix v2 = detail::view_interests(t, p, c, enc.graph, h0, h_target, views->second);
        enc.ssl = ssl_loss(t, interest_distributions(t, v1.vectors), interest_distributions(t, v2.vectors));
    }
    return enc;
}

struct HeadOutput {
    Tensor probs;    // [B x 2]: non-click, click
    Tensor logits;   // [B x 2E]
    Tensor weights;  // [B x E] confidence weights (all ones for a single expert)
};

/// Batch-level head: experts over E' = [V || summary || target], confidence
/// weights, and the configured aggregation. `training` selects the soft
/// aggregation for hard routing, whose hard selection applies at inference.
inline HeadOutput head_forward(Tape& t, DemiNetParams& p, const ModelConfig& c, const Tensor& interests,
                               const Tensor& summary, const Tensor& target, NormMode mode, bool training) {
    const std::size_t b = interests.dim(0);
    const Tensor context = concat_lastdim(t, {summary, target});
    const Tensor features = concat_lastdim(t, {interests, context});
    HeadOutput out;
    out.logits = expert_scores(t, features, p.experts, mode, c.slope);
    if (!c.uses_confidence()) {
        out.weights = Tensor::make_output({b, 1}, std::vector<real>(b, real(1)), false);
    } else {
        out.weights = confidence_weights(t, interests, context, *p.confi, p.experts.prototypes, c.slope);
    }
    if (c.mode == AggregationMode::deminet || (c.mode == AggregationMode::hard_routing && training)) {
        out.probs = aggregate_predict(t, out.logits, out.weights);
    } else {
        out.probs = baseline_aggregate(t, out.logits, out.weights, c.mode, context, p.gate ? &*p.gate : nullptr, c.slope);
    }
    return out;
}

struct LossBreakdown {
    real ce = 0;
    std::vector<real> ssl_per_route;  // batch means
    real total = 0;
};

struct BatchForward {
    Tensor loss;  // scalar: ce + beta * sum_k mean_b ssl
    HeadOutput head;
    LossBreakdown breakdown;
};

namespace detail {

inline std::vector<int> labels_of(std::span<const Sample> batch) {
    std::vector<int> y;
    y.reserve(batch.size());
    for (const auto& s : batch) y.push_back(s.label);
    return y;
}

inline LossBreakdown breakdown(real ce, const std::vector<Tensor>& ssl, std::size_t routes, std::size_t batch, real beta) {
    LossBreakdown lb;
    lb.ce = ce;
    lb.ssl_per_route.assign(routes, real(0));
    for (const auto& s : ssl)
        for (std::size_t k = 0; k < routes; ++k) lb.ssl_per_route[k] += s[k];
    for (auto& v : lb.ssl_per_route) v /= real(batch);
    lb.total = total_loss(lb.ce, lb.ssl_per_route, beta);
    return lb;
}

}  // namespace detail

/// Whole batch on a single tape. Used for gradient checking and as the
/// reference for the phased gradient computation.
inline BatchForward forward_batch(Tape& t, DemiNetParams& p, const ModelConfig& c, std::span<const Sample> batch,
                                  std::span<const ViewSeeds> views, NormMode mode, bool training) {
    if (batch.empty()) throw ContractError("forward_batch: empty batch");
    if (!views.empty() && views.size() != batch.size()) throw DimensionError("forward_batch: one view seed pair per sample");
    std::vector<Tensor> v, sm, tg, ssl;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto enc = encode_sample(t, p, c, batch[i], views.empty() ? nullptr : &views[i]);
        v.push_back(enc.interests);
        sm.push_back(enc.summary);
        tg.push_back(enc.target);
        if (enc.ssl.defined()) ssl.push_back(enc.ssl);
    }
    BatchForward out;
    out.head = head_forward(t, p, c, stack_rows(t, v), stack_rows(t, sm), stack_rows(t, tg), mode, training);
    const auto labels = detail::labels_of(batch);
    const Tensor ce = bce_mean(t, out.head.probs, labels);
    out.loss = ce;
    if (!ssl.empty()) out.loss = add(t, ce, scale(t, sum(t, add_n(t, ssl)), c.beta / real(batch.size())));
    out.breakdown = detail::breakdown(ce.item(), ssl, c.routes, batch.size(), c.beta);
    return out;
}

/// Training-mode loss and gradients for one batch, accumulated into the
/// parameters' gradient buffers. Samples are encoded on private tapes (split
/// across `threads` workers holding parameter copies), the batch head runs
/// on its own tape, and each sample tape is then swept with its slice of the
/// head gradient. Worker gradients are summed in worker order.
inline LossBreakdown compute_gradients(DemiNetParams& p, const ModelConfig& c, std::span<const Sample> batch,
                                       std::span<const ViewSeeds> views, std::size_t threads = 1,
                                       std::vector<real>* p_click = nullptr) {
    const std::size_t b = batch.size();
    if (b == 0) throw ContractError("compute_gradients: empty batch");
    if (!views.empty() && views.size() != b) throw DimensionError("compute_gradients: one view seed pair per sample");
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, b));

    std::vector<DemiNetParams> copies;
    if (workers > 1)
        for (std::size_t w = 0; w < workers; ++w) copies.push_back(p.clone());
    auto params_of = [&](std::size_t w) -> const DemiNetParams& { return workers > 1 ? copies[w] : p; };
    auto chunk = [&](std::size_t w) { return std::pair{w * b / workers, (w + 1) * b / workers}; };

    std::vector<Tape> tapes(b);
    std::vector<SampleEncoding> enc(b);
    auto run_parallel = [&](auto&& body) {
        if (workers == 1) {
            body(std::size_t{0});
            return;
        }
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    body(w);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    };

    run_parallel([&](std::size_t w) {
        const auto [lo, hi] = chunk(w);
        for (std::size_t i = lo; i < hi; ++i) enc[i] = encode_sample(tapes[i], params_of(w), c, batch[i], views.empty() ? nullptr : &views[i]);
    });

    const std::size_t kd = c.routes * c.d;
    std::vector<real> vv, sv, tv;
    vv.reserve(b * kd);
    for (const auto& e : enc) {
        vv.insert(vv.end(), e.interests.values().begin(), e.interests.values().end());
        sv.insert(sv.end(), e.summary.values().begin(), e.summary.values().end());
        tv.insert(tv.end(), e.target.values().begin(), e.target.values().end());
    }
    const Tensor vb = Tensor::from({b, kd}, std::move(vv), true);
    const Tensor sb = Tensor::from({b, c.d}, std::move(sv), true);
    const Tensor tb = Tensor::from({b, 2 * c.d}, std::move(tv), true);
    Tape head_tape;
    const HeadOutput head = head_forward(head_tape, p, c, vb, sb, tb, NormMode::train, true);
    const Tensor ce = bce_mean(head_tape, head.probs, detail::labels_of(batch));
    backward(ce, head_tape);

    std::vector<Tensor> ssl;
    for (const auto& e : enc)
        if (e.ssl.defined()) ssl.push_back(e.ssl);
    const std::vector<real> ssl_seed(c.routes, c.beta / real(b));

    run_parallel([&](std::size_t w) {
        const auto [lo, hi] = chunk(w);
        for (std::size_t i = lo; i < hi; ++i) {
            tapes[i].seed(enc[i].interests, vb.grad().subspan(i * kd, kd));
            tapes[i].seed(enc[i].summary, sb.grad().subspan(i * c.d, c.d));
            tapes[i].seed(enc[i].target, tb.grad().subspan(i * 2 * c.d, 2 * c.d));
            if (enc[i].ssl.defined()) tapes[i].seed(enc[i].ssl, ssl_seed);
            tapes[i].run_backward();
            tapes[i].clear();
        }
    });

    if (workers > 1) {
        auto master = p.trainable();
        for (auto& copy : copies) {
            auto local = copy.trainable();
            for (std::size_t j = 0; j < master.size(); ++j) {
                if (!local[j].has_grad()) continue;
                auto dst = master[j].grad_mut();
                auto src = local[j].grad();
                for (std::size_t q = 0; q < dst.size(); ++q) dst[q] += src[q];
            }
        }
    }

    if (p_click) {
        p_click->clear();
        for (std::size_t i = 0; i < b; ++i) p_click->push_back(head.probs[i * 2 + 1]);
    }
    return detail::breakdown(ce.item(), ssl, c.routes, b, c.beta);
}

/// Click probabilities in inference mode (running batch-norm statistics,
/// full graphs, no views), evaluated in chunks of `chunk` samples.
inline std::vector<real> predict(DemiNetParams& p, const ModelConfig& c, std::span<const Sample> samples,
                                 std::size_t chunk = 1024) {
    std::vector<real> out;
    out.reserve(samples.size());
    for (std::size_t lo = 0; lo < samples.size(); lo += chunk) {
        const auto part = samples.subspan(lo, std::min(chunk, samples.size() - lo));
        Tape t(false);
        std::vector<Tensor> v, sm, tg;
        for (const auto& s : part) {
            auto enc = encode_sample(t, p, c, s);
            v.push_back(enc.interests);
            sm.push_back(enc.summary);
            tg.push_back(enc.target);
        }
        const HeadOutput head = head_forward(t, p, c, stack_rows(t, v), stack_rows(t, sm), stack_rows(t, tg), NormMode::eval, false);
        for (std::size_t i = 0; i < part.size(); ++i) out.push_back(head.probs[i * 2 + 1]);
    }
    return out;
}

}  // namespace deminet
