#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "deminet/ops.hpp"
#include "deminet/params.hpp"
#include "deminet/seqgraph.hpp"

// Dependency-aware heterogeneous graph attention.
//
// Each layer splits the d-wide node state into `heads` disjoint slices of
// width d / heads. Within a slice, inter-node attention aggregates neighbors
// per relation, then inter-dependency attention mixes the four relation
// embeddings. Heads are concatenated once per layer, so width stays d.

namespace deminet {

struct HgaLayerParams {
    // node_attn[r][h]: [2 * head_width], scores [h_i || h_j] for relation r, head h.
    std::array<std::vector<Tensor>, kNumRelations> node_attn;
    std::vector<Tensor> dep_weight;  // per head: [head_width]
    std::vector<Tensor> dep_bias;    // per head: [1]
};

struct HgaParams {
    std::vector<HgaLayerParams> layers;
    Tensor pos_emb;  // [n_max x d]
    std::size_t heads = 1;

    std::size_t width() const { return pos_emb.dim(1); }
    std::size_t head_width() const { return width() / heads; }
    std::size_t max_len() const { return pos_emb.dim(0); }

    static HgaParams create(std::size_t d, std::size_t heads, std::size_t layers, std::size_t n_max, Rng& rng) {
        if (heads == 0 || d % heads != 0) {
            throw ConfigError("hga: embedding width " + std::to_string(d) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        const std::size_t dh = d / heads;
        HgaParams p;
        p.heads = heads;
        for (std::size_t l = 0; l < layers; ++l) {
            HgaLayerParams lp;
            for (Relation r : kRelations)
                for (std::size_t h = 0; h < heads; ++h) lp.node_attn[index_of(r)].push_back(glorot({2 * dh}, 2 * dh, 1, rng));
            for (std::size_t h = 0; h < heads; ++h) {
                lp.dep_weight.push_back(glorot({dh}, dh, 1, rng));
                lp.dep_bias.push_back(zeros_param({1}));
            }
            p.layers.push_back(std::move(lp));
        }
        p.pos_emb = normal_init({n_max, d}, 0.01, rng);
        return p;
    }

    void visit(const std::string& prefix, const TensorVisitor& fn) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            for (Relation r : kRelations)
                for (std::size_t h = 0; h < heads; ++h)
                    fn(lp + "." + std::string(relation_name(r)) + ".head" + std::to_string(h) + ".Wn",
                       layers[l].node_attn[index_of(r)][h]);
            for (std::size_t h = 0; h < heads; ++h) {
                fn(lp + ".head" + std::to_string(h) + ".Wd", layers[l].dep_weight[h]);
                fn(lp + ".head" + std::to_string(h) + ".bd", layers[l].dep_bias[h]);
            }
        }
        fn(prefix + ".pos_emb", pos_emb);
    }
};

/// Attention weights captured during a forward pass, for inspection and tests.
struct HgaTrace {
    // alpha[layer][relation][head][node] -> weights over that node's in-neighbors
    std::vector<std::array<std::vector<std::vector<std::vector<real>>>, kNumRelations>> alpha;
    // beta[layer][head][node] -> 4 relation weights (0 for masked relations)
    std::vector<std::vector<std::vector<std::array<real, kNumRelations>>>> beta;
};

struct RelationEmbedding {
    Tensor emb;               // [n x d]; zero rows where a node has no in-neighbor
    std::vector<bool> has_in;  // per node
};

using NeighborLists = std::vector<std::vector<std::size_t>>;

/// Inter-node attention under one relation, all heads at once.
/// For node i and head h: a_ij = LeakyReLU(w . [h_i || h_j]), alpha = softmax
/// over j in N_i, output_i = sum_j alpha_ij h_j (restricted to the head slice).
inline RelationEmbedding inter_node_attention(Tape& t, const Tensor& hidden, const NeighborLists& nb,
                                              const std::vector<Tensor>& head_weights, real slope,
                                              std::vector<std::vector<std::vector<real>>>* alpha_out = nullptr) {
    detail::require_matrix(hidden, "inter_node_attention");
    const std::size_t n = hidden.dim(0), d = hidden.dim(1), heads = head_weights.size();
    if (heads == 0 || d % heads != 0) throw DimensionError("inter_node_attention: width not divisible by heads");
    if (nb.size() != n) throw DimensionError("inter_node_attention: neighbor lists do not match node count");
    const std::size_t dh = d / heads;
    for (const auto& w : head_weights) {
        if (w.size() != 2 * dh) throw DimensionError("inter_node_attention: attention vector has wrong width");
    }

    std::vector<std::size_t> offset(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + nb[i].size();
    const std::size_t edges = offset[n];

    auto hv = hidden.values();
    std::vector<real> out(n * d, real(0));
    std::vector<real> alpha(heads * edges), pre(heads * edges);
    RelationEmbedding res;
    res.has_in.resize(n);
    if (alpha_out) alpha_out->assign(heads, std::vector<std::vector<real>>(n));

    for (std::size_t i = 0; i < n; ++i) res.has_in[i] = !nb[i].empty();
    // Score split: w . [h_i || h_j] = u_i + v_j with u = w_a . h_i, v = w_b . h_j.
    std::vector<real> u(n), v(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto w = head_weights[h].values();
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            const real* hi = &hv[i * d + off];
            real su = 0, sv = 0;
            for (std::size_t c = 0; c < dh; ++c) {
                su += w[c] * hi[c];
                sv += w[dh + c] * hi[c];
            }
            u[i] = su;
            v[i] = sv;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = nb[i].size();
            if (m == 0) continue;
            real* z = &pre[h * edges + offset[i]];
            real* a = &alpha[h * edges + offset[i]];
            real* oi = &out[i * d + off];
            if (m == 1) {
                z[0] = u[i] + v[nb[i][0]];
                a[0] = 1;
                const real* hj = &hv[nb[i][0] * d + off];
                for (std::size_t c = 0; c < dh; ++c) oi[c] += hj[c];
            } else {
                real mx = -std::numeric_limits<real>::infinity();
                for (std::size_t k = 0; k < m; ++k) {
                    const real sc = u[i] + v[nb[i][k]];
                    z[k] = sc;
                    a[k] = sc >= 0 ? sc : slope * sc;
                    mx = std::max(mx, a[k]);
                }
                real total = 0;
                for (std::size_t k = 0; k < m; ++k) {
                    a[k] = std::exp(a[k] - mx);
                    total += a[k];
                }
                const real inv = real(1) / total;
                for (std::size_t k = 0; k < m; ++k) {
                    a[k] *= inv;
                    const real* hj = &hv[nb[i][k] * d + off];
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += a[k] * hj[c];
                }
            }
            if (alpha_out) (*alpha_out)[h][i].assign(a, a + m);
        }
    }

    bool rg = detail::wants_grad(t, {&hidden});
    if (t.enabled())
        for (const auto& w : head_weights) rg = rg || w.requires_grad();
    res.emb = detail::emit("inter_node_attention", {n, d}, std::move(out), rg);
    if (rg) {
        std::vector<std::size_t> flat;
        flat.reserve(edges);
        for (const auto& l : nb) flat.insert(flat.end(), l.begin(), l.end());
        t.record("inter_node_attention", res.emb,
                 [hidden, head_weights, y = res.emb, flat = std::move(flat), offset = std::move(offset),
                  alpha = std::move(alpha), pre = std::move(pre), n, d, dh, heads, edges, slope]() {
                     auto gy = y.grad();
                     auto hv = hidden.values();
                     std::vector<real> gh(n * d, real(0)), gu(n), gv(n), gw(2 * dh), dalpha;
                     for (std::size_t h = 0; h < heads; ++h) {
                         const auto w = head_weights[h].values();
                         const std::size_t off = h * dh;
                         std::fill(gu.begin(), gu.end(), real(0));
                         std::fill(gv.begin(), gv.end(), real(0));
                         for (std::size_t i = 0; i < n; ++i) {
                             const std::size_t m = offset[i + 1] - offset[i];
                             if (m == 0) continue;
                             const std::size_t* js = &flat[offset[i]];
                             const real* a = &alpha[h * edges + offset[i]];
                             const real* z = &pre[h * edges + offset[i]];
                             const real* g = &gy[i * d + off];
                             dalpha.assign(m, real(0));
                             real s = 0;
                             for (std::size_t k = 0; k < m; ++k) {
                                 const real* hj = &hv[js[k] * d + off];
                                 real* ghj = &gh[js[k] * d + off];
                                 real da = 0;
                                 for (std::size_t c = 0; c < dh; ++c) {
                                     da += g[c] * hj[c];
                                     ghj[c] += a[k] * g[c];
                                 }
                                 dalpha[k] = da;
                                 s += a[k] * da;
                             }
                             if (m == 1) continue;  // alpha is constant 1
                             for (std::size_t k = 0; k < m; ++k) {
                                 const real dz = a[k] * (dalpha[k] - s) * (z[k] >= 0 ? real(1) : slope);
                                 gu[i] += dz;
                                 gv[js[k]] += dz;
                             }
                         }
                         std::fill(gw.begin(), gw.end(), real(0));
                         for (std::size_t i = 0; i < n; ++i) {
                             const real* hi = &hv[i * d + off];
                             real* ghi = &gh[i * d + off];
                             for (std::size_t c = 0; c < dh; ++c) {
                                 gw[c] += gu[i] * hi[c];
                                 gw[dh + c] += gv[i] * hi[c];
                                 ghi[c] += gu[i] * w[c] + gv[i] * w[dh + c];
                             }
                         }
                         if (head_weights[h].requires_grad()) detail::accumulate(head_weights[h], gw);
                     }
                     if (hidden.requires_grad()) detail::accumulate(hidden, gh);
                 });
    }
    return res;
}

/// Inter-dependency attention, all heads at once. Relations a node has no
/// in-neighbors under are excluded from its softmax.
inline Tensor inter_dependency_attention(Tape& t, const std::array<RelationEmbedding, kNumRelations>& rel,
                                         const std::vector<Tensor>& dep_weight, const std::vector<Tensor>& dep_bias,
                                         real slope,
                                         std::vector<std::vector<std::array<real, kNumRelations>>>* beta_out = nullptr) {
    const std::size_t n = rel[0].emb.dim(0), d = rel[0].emb.dim(1), heads = dep_weight.size();
    if (heads == 0 || d % heads != 0 || dep_bias.size() != heads) {
        throw DimensionError("inter_dependency_attention: head configuration does not match width");
    }
    const std::size_t dh = d / heads;
    for (const auto& r : rel) {
        if (r.emb.dim(0) != n || r.emb.dim(1) != d || r.has_in.size() != n) {
            throw DimensionError("inter_dependency_attention: relation embeddings disagree in shape");
        }
    }
    std::vector<real> out(n * d, real(0));
    // beta and pre-activation per (head, node, relation)
    std::vector<real> beta(heads * n * kNumRelations, real(0)), pre(heads * n * kNumRelations, real(0));
    if (beta_out) beta_out->assign(heads, std::vector<std::array<real, kNumRelations>>(n));

    for (std::size_t h = 0; h < heads; ++h) {
        const auto w = dep_weight[h].values();
        const real b = dep_bias[h][0];
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            real* bt = &beta[(h * n + i) * kNumRelations];
            real* z = &pre[(h * n + i) * kNumRelations];
            real mx = -std::numeric_limits<real>::infinity();
            bool any = false;
            for (std::size_t r = 0; r < kNumRelations; ++r) {
                if (!rel[r].has_in[i]) continue;
                any = true;
                const auto hr = rel[r].emb.values();
                real s = b;
                for (std::size_t c = 0; c < dh; ++c) s += w[c] * hr[i * d + off + c];
                z[r] = s;
                bt[r] = s >= 0 ? s : slope * s;
                mx = std::max(mx, bt[r]);
            }
            if (!any) throw ContractError("inter_dependency_attention: node " + std::to_string(i) + " has no relation");
            real total = 0;
            for (std::size_t r = 0; r < kNumRelations; ++r) {
                if (!rel[r].has_in[i]) continue;
                bt[r] = std::exp(bt[r] - mx);
                total += bt[r];
            }
            for (std::size_t r = 0; r < kNumRelations; ++r) {
                if (!rel[r].has_in[i]) continue;
                bt[r] /= total;
                const auto hr = rel[r].emb.values();
                for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += bt[r] * hr[i * d + off + c];
            }
            if (beta_out)
                for (std::size_t r = 0; r < kNumRelations; ++r) (*beta_out)[h][i][r] = bt[r];
        }
    }

    bool rg = false;
    if (t.enabled()) {
        for (const auto& r : rel) rg = rg || r.emb.requires_grad();
        for (std::size_t h = 0; h < heads; ++h) rg = rg || dep_weight[h].requires_grad() || dep_bias[h].requires_grad();
    }
    Tensor y = detail::emit("inter_dependency_attention", {n, d}, std::move(out), rg);
    if (rg) {
        std::array<Tensor, kNumRelations> embs;
        std::array<std::vector<bool>, kNumRelations> masks;
        for (std::size_t r = 0; r < kNumRelations; ++r) {
            embs[r] = rel[r].emb;
            masks[r] = rel[r].has_in;
        }
        t.record("inter_dependency_attention", y,
                 [embs, masks, dep_weight, dep_bias, y, beta = std::move(beta), pre = std::move(pre), n, d, dh, heads,
                  slope]() {
                     auto gy = y.grad();
                     std::array<std::vector<real>, kNumRelations> gr;
                     for (auto& g : gr) g.assign(n * d, real(0));
                     for (std::size_t h = 0; h < heads; ++h) {
                         const auto w = dep_weight[h].values();
                         std::vector<real> gw(dh, real(0));
                         real gb = 0;
                         const std::size_t off = h * dh;
                         for (std::size_t i = 0; i < n; ++i) {
                             const real* bt = &beta[(h * n + i) * kNumRelations];
                             const real* z = &pre[(h * n + i) * kNumRelations];
                             const real* g = &gy[i * d + off];
                             std::array<real, kNumRelations> dbeta{};
                             real s = 0;
                             for (std::size_t r = 0; r < kNumRelations; ++r) {
                                 if (!masks[r][i]) continue;
                                 const auto hr = embs[r].values();
                                 for (std::size_t c = 0; c < dh; ++c) {
                                     dbeta[r] += g[c] * hr[i * d + off + c];
                                     gr[r][i * d + off + c] += bt[r] * g[c];
                                 }
                                 s += bt[r] * dbeta[r];
                             }
                             for (std::size_t r = 0; r < kNumRelations; ++r) {
                                 if (!masks[r][i]) continue;
                                 const auto hr = embs[r].values();
                                 const real dz = bt[r] * (dbeta[r] - s) * (z[r] >= 0 ? real(1) : slope);
                                 gb += dz;
                                 for (std::size_t c = 0; c < dh; ++c) {
                                     gw[c] += dz * hr[i * d + off + c];
                                     gr[r][i * d + off + c] += dz * w[c];
                                 }
                             }
                         }
                         if (dep_weight[h].requires_grad()) detail::accumulate(dep_weight[h], gw);
                         if (dep_bias[h].requires_grad()) dep_bias[h].grad_mut()[0] += gb;
                     }
                     for (std::size_t r = 0; r < kNumRelations; ++r)
                         if (embs[r].requires_grad()) detail::accumulate(embs[r], gr[r]);
                 });
    }
    return y;
}

/// One full layer: four relation-wise inter-node attentions followed by
/// inter-dependency attention.
inline Tensor hga_layer(Tape& t, const Tensor& hidden, const std::array<NeighborLists, kNumRelations>& nb,
                        const HgaLayerParams& lp, real slope, HgaTrace* trace = nullptr) {
    std::array<RelationEmbedding, kNumRelations> rel;
    if (trace) {
        trace->alpha.emplace_back();
        trace->beta.emplace_back();
    }
    for (std::size_t r = 0; r < kNumRelations; ++r) {
        rel[r] = inter_node_attention(t, hidden, nb[r], lp.node_attn[r], slope, trace ? &trace->alpha.back()[r] : nullptr);
    }
    return inter_dependency_attention(t, rel, lp.dep_weight, lp.dep_bias, slope, trace ? &trace->beta.back() : nullptr);
}

/// Runs every layer over the same (fixed) graph view, then adds positional
/// embeddings for positions [0, n).
inline Tensor hga_forward(Tape& t, const GraphView& view, const Tensor& h0, const HgaParams& params, real slope,
                          HgaTrace* trace = nullptr) {
    detail::require_matrix(h0, "hga_forward");
    const std::size_t n = h0.dim(0);
    if (view.n != n) throw DimensionError("hga_forward: graph has " + std::to_string(view.n) + " nodes, input " + std::to_string(n));
    if (n > params.max_len()) {
        throw DimensionError("hga_forward: sequence length " + std::to_string(n) + " exceeds maximum " +
                             std::to_string(params.max_len()));
    }
    std::array<NeighborLists, kNumRelations> nb;
    for (Relation r : kRelations) nb[index_of(r)] = in_neighbors(view, r);
    Tensor h = h0;
    for (const auto& lp : params.layers) h = hga_layer(t, h, nb, lp, slope, trace);
    return add(t, h, slice_rows(t, params.pos_emb, 0, n));
}

}  // namespace deminet
