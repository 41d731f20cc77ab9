#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deminet/core.hpp"
#include "deminet/rng.hpp"

namespace deminet {

/// The four dependency relations of a behavior-sequence graph.
enum class Relation : std::uint8_t { in = 0, out = 1, sim = 2, self = 3 };

inline constexpr std::array<Relation, 4> kRelations{Relation::in, Relation::out, Relation::sim, Relation::self};
inline constexpr std::size_t kNumRelations = 4;

inline std::string_view relation_name(Relation r) {
    switch (r) {
        case Relation::in: return "r_in";
        case Relation::out: return "r_out";
        case Relation::sim: return "r_sim";
        case Relation::self: return "r_self";
    }
    return "?";
}

inline std::size_t index_of(Relation r) { return static_cast<std::size_t>(r); }

/// Directed edge (source, dest): messages flow from source into dest.
using Edge = std::pair<std::size_t, std::size_t>;
using EdgeSets = std::array<std::vector<Edge>, kNumRelations>;

/// Per-sequence graph, one node per sequence position. Edge lists are kept
/// sorted so that two graphs compare equal iff their edge sets are equal.
struct HeteroGraph {
    std::size_t n = 0;
    EdgeSets edges;

    const std::vector<Edge>& of(Relation r) const { return edges[index_of(r)]; }
    std::size_t edge_count() const {
        std::size_t c = 0;
        for (const auto& e : edges) c += e.size();
        return c;
    }
    bool operator==(const HeteroGraph&) const = default;
};

/// A (possibly masked) edge subset of a HeteroGraph, used as attention input.
struct GraphView {
    std::size_t n = 0;
    EdgeSets edges;

    const std::vector<Edge>& of(Relation r) const { return edges[index_of(r)]; }
    std::size_t edge_count() const {
        std::size_t c = 0;
        for (const auto& e : edges) c += e.size();
        return c;
    }
    bool operator==(const GraphView&) const = default;
};

inline GraphView full_view(const HeteroGraph& g) { return GraphView{g.n, g.edges}; }

/// Cosine similarity; defined as 0 when either vector has norm below 1e-12.
inline real cosine_similarity(std::span<const real> a, std::span<const real> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_similarity: vector lengths differ");
    real dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < real(1e-12) || nb < real(1e-12)) return 0;
    return std::clamp(dot / (na * nb), real(-1), real(1));
}

/// Builds the dependency graph from row-major [n x d] initial embeddings.
///
/// r_in holds (j, i) for the up-to-epsilon items before i, r_out holds (j, i)
/// for the up-to-epsilon items after i, so r_out is the transpose of r_in.
/// r_sim links every pair with cosine >= threshold in both directions.
inline HeteroGraph build_hetero_graph(std::span<const real> embeddings, std::size_t n, std::size_t d,
                                      std::size_t epsilon, real threshold) {
    if (n == 0) throw EmptySequenceError("build_hetero_graph: empty sequence");
    if (embeddings.size() != n * d) throw DimensionError("build_hetero_graph: embedding size does not match n x d");
    if (epsilon < 1) throw ContractError("build_hetero_graph: epsilon must be >= 1");
    // Thresholds above 1 are accepted and simply produce no similarity edges.
    if (std::isnan(threshold) || threshold < -1) throw ContractError("build_hetero_graph: threshold below -1");
    HeteroGraph g;
    g.n = n;
    auto& in = g.edges[index_of(Relation::in)];
    auto& out = g.edges[index_of(Relation::out)];
    auto& sim = g.edges[index_of(Relation::sim)];
    auto& self = g.edges[index_of(Relation::self)];
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= epsilon ? i - epsilon : 0;
        for (std::size_t j = lo; j < i; ++j) in.emplace_back(j, i);
        for (std::size_t j = i + 1; j <= std::min(n - 1, i + epsilon); ++j) out.emplace_back(j, i);
        self.emplace_back(i, i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const real s = cosine_similarity(embeddings.subspan(i * d, d), embeddings.subspan(j * d, d));
            if (s >= threshold) {
                sim.emplace_back(i, j);
                sim.emplace_back(j, i);
            }
        }
    }
    for (auto& e : g.edges) std::sort(e.begin(), e.end());
    return g;
}

/// Independently keeps each r_in / r_out / r_sim edge with probability
/// 1 - rho. Self-loops are never dropped, so every node keeps an in-edge.
inline GraphView edge_dropout(const HeteroGraph& g, double rho, std::uint64_t seed) {
    if (!(rho >= 0 && rho <= 1)) throw ContractError("edge_dropout: rho must lie in [0, 1]");
    Rng rng(seed);
    GraphView v;
    v.n = g.n;
    for (Relation r : kRelations) {
        const auto& src = g.of(r);
        auto& dst = v.edges[index_of(r)];
        if (r == Relation::self) {
            dst = src;
            continue;
        }
        dst.reserve(src.size());
        for (const auto& e : src) {
            if (rng.uniform() >= rho) dst.push_back(e);
        }
    }
    return v;
}

/// Incoming neighbor lists per destination node under one relation.
inline std::vector<std::vector<std::size_t>> in_neighbors(const GraphView& v, Relation r) {
    std::vector<std::vector<std::size_t>> nb(v.n);
    for (const auto& [src, dst] : v.of(r)) nb[dst].push_back(src);
    return nb;
}

/// Debug listing, one "relation source dest" triple per line.
inline std::string dump_graph(const GraphView& v) {
    std::ostringstream os;
    for (Relation r : kRelations)
        for (const auto& [s, d] : v.of(r)) os << relation_name(r) << ' ' << s << ' ' << d << '\n';
    return os.str();
}

inline std::string dump_graph(const HeteroGraph& g) { return dump_graph(full_view(g)); }

}  // namespace deminet
