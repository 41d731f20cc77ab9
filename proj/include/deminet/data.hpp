#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deminet/core.hpp"
#include "deminet/rng.hpp"

namespace deminet {

/// One raw interaction, ids as they appear in the source log.
struct Record {
    std::int64_t user = 0;
    std::int64_t item = 0;
    std::int64_t category = 0;
    std::int64_t timestamp = 0;
    std::string event;
    bool operator==(const Record&) const = default;
};

struct BehaviorLog {
    std::vector<Record> records;
    std::size_t malformed = 0;
    std::vector<std::string> malformed_samples;  // first few offending lines
    std::size_t dropped_events = 0;               // well-formed but not click-equivalent
};

struct LogFormat {
    char delimiter = '\t';
    int user_col = 0;
    int item_col = 1;
    int category_col = 2;
    int time_col = 3;
    int event_col = -1;                 // -1: no event column
    std::set<std::string> click_events;  // empty: keep every event
    bool has_header = false;
    double max_malformed_fraction = 0.01;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline bool parse_int(std::string_view s, std::int64_t& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

inline std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

}  // namespace detail

/// Parses a delimited behavior log from a stream. Lines with missing or
/// non-integer fields are counted as malformed; more than the allowed
/// fraction of malformed lines is a hard error.
inline BehaviorLog parse_behavior_log(std::istream& in, const LogFormat& fmt, const std::string& source = "<stream>") {
    BehaviorLog log;
    const int needed = std::max({fmt.user_col, fmt.item_col, fmt.category_col, fmt.time_col, fmt.event_col}) + 1;
    if (needed < 4) throw ConfigError("log format: need at least 4 columns");
    std::string line;
    std::size_t lines = 0;
    bool header_pending = fmt.has_header;
    while (std::getline(in, line)) {
        if (header_pending) {
            header_pending = false;
            continue;
        }
        if (line.empty() || line == "\r") continue;
        ++lines;
        const auto f = detail::split_fields(line, fmt.delimiter);
        Record r;
        const bool ok = static_cast<int>(f.size()) >= needed && detail::parse_int(f[fmt.user_col], r.user) &&
                        detail::parse_int(f[fmt.item_col], r.item) && detail::parse_int(f[fmt.category_col], r.category) &&
                        detail::parse_int(f[fmt.time_col], r.timestamp) && r.user >= 0 && r.item >= 0 && r.category >= 0;
        if (!ok) {
            ++log.malformed;
            if (log.malformed_samples.size() < 5) log.malformed_samples.push_back(line);
            continue;
        }
        if (fmt.event_col >= 0) r.event = detail::trim(f[fmt.event_col]);
        if (!fmt.click_events.empty() && !fmt.click_events.contains(r.event)) {
            ++log.dropped_events;
            continue;
        }
        log.records.push_back(std::move(r));
    }
    if (lines > 0 && static_cast<double>(log.malformed) > fmt.max_malformed_fraction * static_cast<double>(lines)) {
        std::string msg = "parse " + source + ": " + std::to_string(log.malformed) + " of " + std::to_string(lines) +
                          " lines malformed";
        for (const auto& s : log.malformed_samples) msg += "\n  > " + s;
        throw DataError(msg);
    }
    return log;
}

inline BehaviorLog parse_behavior_log(const std::string& path, const LogFormat& fmt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read behavior log " + path);
    return parse_behavior_log(in, fmt, path);
}

inline void write_behavior_log(std::ostream& os, const BehaviorLog& log, char delim = '\t') {
    for (const auto& r : log.records) {
        os << r.user << delim << r.item << delim << r.category << delim << r.timestamp;
        if (!r.event.empty()) os << delim << r.event;
        os << '\n';
    }
}

/// Drops every user with fewer than `min_interactions` records.
inline BehaviorLog filter_users(const BehaviorLog& log, std::size_t min_interactions) {
    std::unordered_map<std::int64_t, std::size_t> count;
    for (const auto& r : log.records) ++count[r.user];
    BehaviorLog out;
    out.malformed = log.malformed;
    for (const auto& r : log.records)
        if (count[r.user] >= min_interactions) out.records.push_back(r);
    return out;
}

struct SplitResult {
    BehaviorLog train;
    BehaviorLog test;
    std::int64_t split_time = 0;
};

/// Splits at the `fraction` quantile T of record timestamps: t < T trains,
/// t >= T tests. T is the timestamp at sorted position floor(fraction * m),
/// moved past the minimum when ties would leave the training side empty.
inline SplitResult temporal_split(const BehaviorLog& log, double fraction) {
    if (!(fraction > 0 && fraction < 1)) throw ConfigError("temporal_split: fraction must lie in (0, 1)");
    if (log.records.empty()) throw DataError("temporal_split: empty log");
    std::vector<std::int64_t> ts;
    ts.reserve(log.records.size());
    for (const auto& r : log.records) ts.push_back(r.timestamp);
    std::sort(ts.begin(), ts.end());
    if (ts.front() == ts.back()) throw DataError("temporal_split: all timestamps identical, split is degenerate");
    const auto pos = std::min(ts.size() - 1, static_cast<std::size_t>(fraction * static_cast<double>(ts.size())));
    std::int64_t split = ts[pos];
    if (split == ts.front()) split = *std::upper_bound(ts.begin(), ts.end(), ts.front());
    SplitResult out;
    out.split_time = split;
    for (const auto& r : log.records) (r.timestamp < split ? out.train : out.test).records.push_back(r);
    return out;
}

/// Dense id maps. Index 0 is padding in every map.
class Vocab {
  public:
    static Vocab build(const BehaviorLog& log) {
        Vocab v;
        std::vector<std::int64_t> users, items;
        std::map<std::int64_t, std::int64_t> item_cat;
        std::set<std::int64_t> cats;
        for (const auto& r : log.records) {
            users.push_back(r.user);
            items.push_back(r.item);
            item_cat.emplace(r.item, r.category);
            cats.insert(r.category);
        }
        auto assign = [](std::vector<std::int64_t>& raw, std::unordered_map<std::int64_t, std::uint32_t>& fwd,
                         std::vector<std::int64_t>& back) {
            std::sort(raw.begin(), raw.end());
            raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
            back.assign(1, -1);
            for (auto x : raw) {
                fwd.emplace(x, static_cast<std::uint32_t>(back.size()));
                back.push_back(x);
            }
        };
        assign(users, v.user_fwd_, v.user_back_);
        assign(items, v.item_fwd_, v.item_back_);
        std::vector<std::int64_t> cat_list(cats.begin(), cats.end());
        assign(cat_list, v.cat_fwd_, v.cat_back_);
        v.item_category_.assign(v.item_back_.size(), 0);
        for (const auto& [item, cat] : item_cat) v.item_category_[v.item_fwd_.at(item)] = v.cat_fwd_.at(cat);
        return v;
    }

    // Sizes include the padding slot.
    std::size_t num_users() const { return user_back_.size(); }
    std::size_t num_items() const { return item_back_.size(); }
    std::size_t num_categories() const { return cat_back_.size(); }

    std::uint32_t user(std::int64_t raw) const { return lookup(user_fwd_, raw, "user"); }
    std::uint32_t item(std::int64_t raw) const { return lookup(item_fwd_, raw, "item"); }
    std::uint32_t category(std::int64_t raw) const { return lookup(cat_fwd_, raw, "category"); }
    std::int64_t raw_user(std::uint32_t idx) const { return user_back_.at(idx); }
    std::int64_t raw_item(std::uint32_t idx) const { return item_back_.at(idx); }
    std::int64_t raw_category(std::uint32_t idx) const { return cat_back_.at(idx); }
    std::uint32_t category_of_item(std::uint32_t item_idx) const { return item_category_.at(item_idx); }

  private:
    static std::uint32_t lookup(const std::unordered_map<std::int64_t, std::uint32_t>& m, std::int64_t raw,
                                const char* what) {
        auto it = m.find(raw);
        if (it == m.end()) throw DataError(std::string("vocab: unknown ") + what + " id " + std::to_string(raw));
        return it->second;
    }

    std::unordered_map<std::int64_t, std::uint32_t> user_fwd_, item_fwd_, cat_fwd_;
    std::vector<std::int64_t> user_back_, item_back_, cat_back_;
    std::vector<std::uint32_t> item_category_;
};

/// A training/eval instance: time-ordered history and a candidate target.
struct Sample {
    std::uint32_t user = 0;
    std::vector<std::uint32_t> items;
    std::vector<std::uint32_t> categories;
    std::uint32_t target_item = 0;
    std::uint32_t target_category = 0;
    int label = 0;
    std::int64_t time = 0;  // timestamp of the positive interaction this sample was built from
    bool operator==(const Sample&) const = default;
};

struct SampleOptions {
    std::size_t n_max = 20;
    std::size_t min_interactions = 5;
    std::size_t neg_per_pos = 1;
};

namespace detail {

struct UserHistory {
    std::uint32_t user;
    std::vector<const Record*> records;  // time-ordered
};

inline std::vector<UserHistory> histories(const BehaviorLog& log, const Vocab& vocab) {
    std::map<std::uint32_t, std::vector<const Record*>> by_user;
    for (const auto& r : log.records) by_user[vocab.user(r.user)].push_back(&r);
    std::vector<UserHistory> out;
    for (auto& [u, recs] : by_user) {
        std::stable_sort(recs.begin(), recs.end(), [](const Record* a, const Record* b) { return a->timestamp < b->timestamp; });
        out.push_back(UserHistory{u, std::move(recs)});
    }
    return out;
}

inline std::uint32_t draw_negative(const std::unordered_set<std::uint32_t>& seen, std::size_t num_items, Rng& rng) {
    if (seen.size() + 1 >= num_items) throw DataError("negative sampling: user has interacted with every item");
    while (true) {
        const auto cand = static_cast<std::uint32_t>(1 + rng.below(num_items - 1));
        if (!seen.contains(cand)) return cand;
    }
}

inline void emit_position(const std::vector<const Record*>& recs, std::size_t r, std::uint32_t user, const Vocab& vocab,
                          const SampleOptions& opt, const std::unordered_set<std::uint32_t>& seen, Rng& rng,
                          std::vector<Sample>& out) {
    Sample pos;
    pos.user = user;
    const std::size_t begin = r > opt.n_max ? r - opt.n_max : 0;
    for (std::size_t j = begin; j < r; ++j) {
        const auto it = vocab.item(recs[j]->item);
        pos.items.push_back(it);
        pos.categories.push_back(vocab.category_of_item(it));
    }
    pos.target_item = vocab.item(recs[r]->item);
    pos.target_category = vocab.category_of_item(pos.target_item);
    pos.label = 1;
    pos.time = recs[r]->timestamp;
    out.push_back(pos);
    for (std::size_t k = 0; k < opt.neg_per_pos; ++k) {
        Sample neg = pos;
        neg.target_item = draw_negative(seen, vocab.num_items(), rng);
        neg.target_category = vocab.category_of_item(neg.target_item);
        neg.label = 0;
        out.push_back(std::move(neg));
    }
}

}  // namespace detail

/// Next-item samples: for every retained user and every position r >= 1,
/// one positive (last n_max prior items, target = item r) followed by
/// `neg_per_pos` negatives drawn uniformly from items outside the user's history.
inline std::vector<Sample> build_samples(const BehaviorLog& log, const Vocab& vocab, const SampleOptions& opt, Rng& rng) {
    if (opt.min_interactions < 2) throw ConfigError("build_samples: min_interactions must be >= 2");
    if (vocab.num_items() <= 1) throw ConfigError("build_samples: empty item vocabulary");
    if (opt.n_max == 0) throw ConfigError("build_samples: n_max must be positive");
    std::vector<Sample> out;
    for (const auto& h : detail::histories(log, vocab)) {
        if (h.records.size() < opt.min_interactions) continue;
        std::unordered_set<std::uint32_t> seen;
        for (const auto* r : h.records) seen.insert(vocab.item(r->item));
        for (std::size_t r = 1; r < h.records.size(); ++r) detail::emit_position(h.records, r, h.user, vocab, opt, seen, rng, out);
    }
    return out;
}

/// Evaluation samples: targets are interactions at or after `split_time`
/// of users with at least one earlier (training-period) interaction; the
/// history is everything before the target.
inline std::vector<Sample> build_test_samples(const BehaviorLog& log, const Vocab& vocab, std::int64_t split_time,
                                              const SampleOptions& opt, Rng& rng) {
    if (vocab.num_items() <= 1) throw ConfigError("build_test_samples: empty item vocabulary");
    std::vector<Sample> out;
    for (const auto& h : detail::histories(log, vocab)) {
        if (h.records.size() < opt.min_interactions) continue;
        if (h.records.front()->timestamp >= split_time) continue;  // cold-start user
        std::unordered_set<std::uint32_t> seen;
        for (const auto* r : h.records) seen.insert(vocab.item(r->item));
        for (std::size_t r = 1; r < h.records.size(); ++r) {
            if (h.records[r]->timestamp < split_time) continue;
            detail::emit_position(h.records, r, h.user, vocab, opt, seen, rng, out);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sample stream: "DMSAMP1" then length-prefixed records until end of file.
// Record payload (little-endian): u32 user, u32 target_item, u32 target_category,
// u8 label, i64 time, u32 length, length x (u32 item, u32 category).

inline constexpr char kSampleMagic[7] = {'D', 'M', 'S', 'A', 'M', 'P', '1'};

namespace detail {

inline void put_le(std::string& buf, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_samples(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write samples to " + path);
    os.write(kSampleMagic, 7);
    std::string rec;
    for (const auto& s : samples) {
        rec.clear();
        detail::put_le(rec, s.user, 4);
        detail::put_le(rec, s.target_item, 4);
        detail::put_le(rec, s.target_category, 4);
        detail::put_le(rec, static_cast<std::uint64_t>(s.label), 1);
        detail::put_le(rec, static_cast<std::uint64_t>(s.time), 8);
        detail::put_le(rec, s.items.size(), 4);
        for (std::size_t i = 0; i < s.items.size(); ++i) {
            detail::put_le(rec, s.items[i], 4);
            detail::put_le(rec, s.categories[i], 4);
        }
        std::string len;
        detail::put_le(len, rec.size(), 4);
        os.write(len.data(), 4);
        os.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    if (!os) throw IoError("sample write failed for " + path);
}

inline std::vector<Sample> read_samples(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read samples from " + path);
    char magic[7];
    if (!is.read(magic, 7) || std::string_view(magic, 7) != std::string_view(kSampleMagic, 7)) {
        throw IoError("sample file " + path + ": bad header");
    }
    std::vector<Sample> out;
    unsigned char lenb[4];
    std::vector<unsigned char> buf;
    while (is.read(reinterpret_cast<char*>(lenb), 4)) {
        const auto len = detail::get_le(lenb, 4);
        if (len < 25 || len > (1u << 24)) throw IoError("sample file " + path + ": corrupt record length");
        buf.resize(len);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len))) {
            throw IoError("sample file " + path + ": truncated record");
        }
        const unsigned char* p = buf.data();
        Sample s;
        s.user = static_cast<std::uint32_t>(detail::get_le(p, 4));
        s.target_item = static_cast<std::uint32_t>(detail::get_le(p + 4, 4));
        s.target_category = static_cast<std::uint32_t>(detail::get_le(p + 8, 4));
        s.label = static_cast<int>(p[12]);
        s.time = static_cast<std::int64_t>(detail::get_le(p + 13, 8));
        const auto n = detail::get_le(p + 21, 4);
        if (len != 25 + 8 * n) throw IoError("sample file " + path + ": record length disagrees with sequence length");
        for (std::uint64_t i = 0; i < n; ++i) {
            s.items.push_back(static_cast<std::uint32_t>(detail::get_le(p + 25 + 8 * i, 4)));
            s.categories.push_back(static_cast<std::uint32_t>(detail::get_le(p + 29 + 8 * i, 4)));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace deminet
