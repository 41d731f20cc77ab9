#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "deminet/data.hpp"
#include "deminet/rng.hpp"

namespace deminet {

struct SynthSpec {
    std::size_t num_users = 2000;
    std::size_t num_items = 500;
    std::size_t num_interests = 8;
    std::size_t seq_len = 30;
    double noise = 0.1;
    std::int64_t time_horizon = 1'000'000;
};

struct SynthTruth {
    std::vector<std::vector<std::size_t>> user_clusters;  // by raw user id
    std::vector<std::size_t> item_cluster;                // by raw item id
};

struct SynthResult {
    BehaviorLog log;
    SynthTruth truth;
};

/// Item `i` belongs to cluster floor(i * C / num_items).
inline std::size_t synth_item_cluster(std::size_t item, std::size_t num_items, std::size_t clusters) {
    return item * clusters / num_items;
}

/// Planted-interest logs. Each user owns 2 or 3 clusters; an interaction
/// picks one of them uniformly and an item uniformly inside it with
/// probability 1 - noise, otherwise an item uniformly from the catalogue.
/// The item's category is its cluster. Per-user timestamps are sorted
/// uniform draws over a shared horizon.
inline SynthResult synth_generate(const SynthSpec& spec, Rng& rng) {
    if (spec.num_interests < 2) throw ConfigError("synth: num_interests must be >= 2");
    if (spec.num_items < spec.num_interests) throw ConfigError("synth: num_items must be >= num_interests");
    if (spec.num_users == 0 || spec.seq_len == 0) throw ConfigError("synth: num_users and seq_len must be positive");
    if (!(spec.noise >= 0 && spec.noise <= 1)) throw ConfigError("synth: noise must lie in [0, 1]");
    if (spec.time_horizon <= 0) throw ConfigError("synth: time_horizon must be positive");

    const std::size_t c = spec.num_interests;
    SynthResult out;
    out.truth.item_cluster.resize(spec.num_items);
    std::vector<std::vector<std::size_t>> members(c);
    for (std::size_t i = 0; i < spec.num_items; ++i) {
        const auto k = synth_item_cluster(i, spec.num_items, c);
        out.truth.item_cluster[i] = k;
        members[k].push_back(i);
    }

    out.log.records.reserve(spec.num_users * spec.seq_len);
    std::vector<std::int64_t> times(spec.seq_len);
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        const std::size_t owned = std::min<std::size_t>(c, 2 + rng.below(2));
        std::vector<std::size_t> pool(c);
        for (std::size_t k = 0; k < c; ++k) pool[k] = k;
        for (std::size_t k = 0; k < owned; ++k) std::swap(pool[k], pool[k + rng.below(c - k)]);
        std::vector<std::size_t> mine(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(owned));
        std::sort(mine.begin(), mine.end());

        for (auto& t : times) t = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.time_horizon)));
        std::sort(times.begin(), times.end());
        for (std::size_t s = 0; s < spec.seq_len; ++s) {
            std::size_t item;
            if (rng.uniform() < spec.noise) {
                item = rng.below(spec.num_items);
            } else {
                const auto& m = members[mine[rng.below(mine.size())]];
                item = m[rng.below(m.size())];
            }
            out.log.records.push_back(Record{static_cast<std::int64_t>(u), static_cast<std::int64_t>(item),
                                             static_cast<std::int64_t>(out.truth.item_cluster[item]), times[s], "click"});
        }
        out.truth.user_clusters.push_back(std::move(mine));
    }
    return out;
}

inline void write_synth_truth(const std::string& path, const SynthTruth& truth) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "kind,id,clusters\n";
    for (std::size_t u = 0; u < truth.user_clusters.size(); ++u) {
        os << "user," << u << ',';
        for (std::size_t j = 0; j < truth.user_clusters[u].size(); ++j) os << (j ? ";" : "") << truth.user_clusters[u][j];
        os << '\n';
    }
    for (std::size_t i = 0; i < truth.item_cluster.size(); ++i) os << "item," << i << ',' << truth.item_cluster[i] << '\n';
}

}  // namespace deminet
