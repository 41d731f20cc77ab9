#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deminet/data.hpp"
#include "deminet/model.hpp"
#include "deminet/optimizer.hpp"
#include "deminet/rng.hpp"
#include "deminet/synth.hpp"

namespace deminet {

/// Every tunable of an experiment. Keys in config files and command-line
/// flags use the member names below.
struct ExperimentConfig {
    // model
    std::size_t d = 16, heads = 4, layers = 2, routes = 4, n_max = 20;
    std::size_t interest_hidden = 16, expert_hidden1 = 64, expert_hidden2 = 32;
    std::size_t confi_hidden1 = 64, confi_hidden2 = 32, gate_hidden = 32;
    std::size_t epsilon = 3;
    double threshold = 0.7, rho = 0.6, beta = 0.1, leaky_slope = 0.01, embedding_std = 0.01;
    bool dha_off = false, ssl_off = false, single_expert = false, normalize_interest = true;
    std::string pooling = "mean";
    std::string aggregation = "deminet";
    // optimization
    double lr = 1e-3, adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8, clip_norm = 5.0;
    std::size_t batch_size = 256, steps = 3000, eval_interval = 250, eval_batch = 1024, threads = 1;
    std::uint64_t seed = 7;
    // data
    std::string data_dir, log_path;
    std::string delimiter = "tab";
    int user_col = 0, item_col = 1, category_col = 2, time_col = 3, event_col = -1;
    std::string click_events;
    bool has_header = false;
    std::size_t min_interactions = 5, neg_per_pos = 1;
    double split_fraction = 0.8;
    std::size_t synth_users = 2000, synth_items = 500, synth_interests = 8, synth_seq_len = 30;
    double synth_noise = 0.1;
    // outputs
    std::string out_dir = "run";
    std::string checkpoint;
    std::size_t export_limit = 100;
};

namespace detail {

struct ConfigKey {
    std::string name;
    std::function<std::string(ExperimentConfig&, const std::string&)> set;  // returns an error message or ""
    std::function<std::string(const ExperimentConfig&)> get;
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
ConfigKey uint_key(std::string name, T ExperimentConfig::*m) {
    return {name,
            [m, name](ExperimentConfig& c, const std::string& v) -> std::string {
                std::uint64_t x = 0;
                auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
                if (ec != std::errc() || p != v.data() + v.size()) return name + ": expected a non-negative integer, got '" + v + "'";
                c.*m = static_cast<T>(x);
                return "";
            },
            [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}

inline ConfigKey int_key(std::string name, int ExperimentConfig::*m) {
    return {name,
            [m, name](ExperimentConfig& c, const std::string& v) -> std::string {
                int x = 0;
                auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
                if (ec != std::errc() || p != v.data() + v.size()) return name + ": expected an integer, got '" + v + "'";
                c.*m = x;
                return "";
            },
            [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}

inline ConfigKey real_key(std::string name, double ExperimentConfig::*m) {
    return {name,
            [m, name](ExperimentConfig& c, const std::string& v) -> std::string {
                try {
                    std::size_t used = 0;
                    const double x = std::stod(v, &used);
                    if (used != v.size()) throw std::invalid_argument(v);
                    c.*m = x;
                    return "";
                } catch (const std::exception&) {
                    return name + ": expected a number, got '" + v + "'";
                }
            },
            [m](const ExperimentConfig& c) { return fmt_double(c.*m); }};
}

inline ConfigKey bool_key(std::string name, bool ExperimentConfig::*m) {
    return {name,
            [m, name](ExperimentConfig& c, const std::string& v) -> std::string {
                if (v == "true" || v == "1" || v == "yes" || v == "on") c.*m = true;
                else if (v == "false" || v == "0" || v == "no" || v == "off") c.*m = false;
                else return name + ": expected true/false, got '" + v + "'";
                return "";
            },
            [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline ConfigKey string_key(std::string name, std::string ExperimentConfig::*m) {
    return {name,
            [m](ExperimentConfig& c, const std::string& v) -> std::string {
                c.*m = v;
                return "";
            },
            [m](const ExperimentConfig& c) { return c.*m; }};
}

inline const std::vector<ConfigKey>& config_keys() {
    using C = ExperimentConfig;
    static const std::vector<ConfigKey> keys = {
        uint_key("d", &C::d), uint_key("heads", &C::heads), uint_key("layers", &C::layers),
        uint_key("routes", &C::routes), uint_key("n_max", &C::n_max), uint_key("interest_hidden", &C::interest_hidden),
        uint_key("expert_hidden1", &C::expert_hidden1), uint_key("expert_hidden2", &C::expert_hidden2),
        uint_key("confi_hidden1", &C::confi_hidden1), uint_key("confi_hidden2", &C::confi_hidden2),
        uint_key("gate_hidden", &C::gate_hidden), uint_key("epsilon", &C::epsilon),
        real_key("threshold", &C::threshold), real_key("rho", &C::rho), real_key("beta", &C::beta),
        real_key("leaky_slope", &C::leaky_slope), real_key("embedding_std", &C::embedding_std),
        bool_key("dha_off", &C::dha_off), bool_key("ssl_off", &C::ssl_off), bool_key("single_expert", &C::single_expert),
        bool_key("normalize_interest", &C::normalize_interest), string_key("pooling", &C::pooling),
        string_key("aggregation", &C::aggregation),
        real_key("lr", &C::lr), real_key("adam_beta1", &C::adam_beta1), real_key("adam_beta2", &C::adam_beta2),
        real_key("adam_eps", &C::adam_eps), real_key("clip_norm", &C::clip_norm),
        uint_key("batch_size", &C::batch_size), uint_key("steps", &C::steps), uint_key("eval_interval", &C::eval_interval),
        uint_key("eval_batch", &C::eval_batch), uint_key("threads", &C::threads), uint_key("seed", &C::seed),
        string_key("data_dir", &C::data_dir), string_key("log_path", &C::log_path), string_key("delimiter", &C::delimiter),
        int_key("user_col", &C::user_col), int_key("item_col", &C::item_col), int_key("category_col", &C::category_col),
        int_key("time_col", &C::time_col), int_key("event_col", &C::event_col), string_key("click_events", &C::click_events),
        bool_key("has_header", &C::has_header), uint_key("min_interactions", &C::min_interactions),
        uint_key("neg_per_pos", &C::neg_per_pos), real_key("split_fraction", &C::split_fraction),
        uint_key("synth_users", &C::synth_users), uint_key("synth_items", &C::synth_items),
        uint_key("synth_interests", &C::synth_interests), uint_key("synth_seq_len", &C::synth_seq_len),
        real_key("synth_noise", &C::synth_noise),
        string_key("out_dir", &C::out_dir), string_key("checkpoint", &C::checkpoint),
        uint_key("export_limit", &C::export_limit),
    };
    return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
    std::vector<std::string> out;
    for (const auto& k : detail::config_keys()) out.push_back(k.name);
    return out;
}

/// Accumulates assignments and reports every problem at once.
class ConfigBuilder {
  public:
    void set(const std::string& key, const std::string& value, const std::string& where = "") {
        const auto* k = detail::find_key(key);
        const std::string prefix = where.empty() ? "" : where + ": ";
        if (k == nullptr) {
            errors_.push_back(prefix + "unknown key '" + key + "'");
            return;
        }
        auto err = k->set(cfg_, value);
        if (!err.empty()) errors_.push_back(prefix + err);
    }

    /// Flat `key = value` lines; `#` starts a comment.
    void load_text(std::istream& in, const std::string& source) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            const std::string where = source + ":" + std::to_string(lineno);
            if (eq == std::string::npos) {
                errors_.push_back(where + ": expected 'key = value'");
                continue;
            }
            set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)), where);
        }
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            errors_.push_back("cannot read config file " + path);
            return;
        }
        load_text(in, path);
    }

    const std::vector<std::string>& errors() const { return errors_; }
    ExperimentConfig& config() { return cfg_; }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    ExperimentConfig cfg_;
    std::vector<std::string> errors_;
};

/// Canonical `key = value` listing of every key, in registry order.
inline std::string config_to_text(const ExperimentConfig& c) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(c) + "\n";
    return out;
}

/// FNV-1a of the canonical listing, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(config_to_text(c))));
    return buf;
}

inline char parse_delimiter(const std::string& s) {
    if (s == "tab" || s == "\\t") return '\t';
    if (s == "comma") return ',';
    if (s == "space") return ' ';
    if (s.size() == 1) return s[0];
    throw ConfigError("delimiter: expected tab, comma, space or a single character, got '" + s + "'");
}

inline ModelConfig model_config(const ExperimentConfig& e, std::size_t num_items, std::size_t num_categories) {
    ModelConfig m;
    m.num_items = num_items;
    m.num_categories = num_categories;
    m.d = e.d;
    m.heads = e.heads;
    m.layers = e.layers;
    m.routes = e.routes;
    m.n_max = e.n_max;
    m.interest_hidden = e.interest_hidden;
    m.expert_hidden1 = e.expert_hidden1;
    m.expert_hidden2 = e.expert_hidden2;
    m.confi_hidden1 = e.confi_hidden1;
    m.confi_hidden2 = e.confi_hidden2;
    m.gate_hidden = e.gate_hidden;
    m.epsilon = e.epsilon;
    m.threshold = static_cast<real>(e.threshold);
    m.rho = static_cast<real>(e.rho);
    m.beta = e.ssl_off ? real(0) : static_cast<real>(e.beta);
    m.slope = static_cast<real>(e.leaky_slope);
    m.embedding_std = static_cast<real>(e.embedding_std);
    m.dha_off = e.dha_off;
    m.single_expert = e.single_expert;
    m.normalize_interest = e.normalize_interest;
    m.pooling = e.pooling == "last" ? Pooling::last : Pooling::mean;
    m.mode = parse_mode(e.aggregation);
    return m;
}

inline AdamConfig adam_config(const ExperimentConfig& e) {
    return AdamConfig{static_cast<real>(e.lr), static_cast<real>(e.adam_beta1), static_cast<real>(e.adam_beta2),
                      static_cast<real>(e.adam_eps)};
}

inline LogFormat log_format(const ExperimentConfig& e) {
    LogFormat f;
    f.delimiter = parse_delimiter(e.delimiter);
    f.user_col = e.user_col;
    f.item_col = e.item_col;
    f.category_col = e.category_col;
    f.time_col = e.time_col;
    f.event_col = e.event_col;
    f.has_header = e.has_header;
    std::stringstream ss(e.click_events);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) f.click_events.insert(tok);
    return f;
}

inline SynthSpec synth_spec(const ExperimentConfig& e) {
    SynthSpec s;
    s.num_users = e.synth_users;
    s.num_items = e.synth_items;
    s.num_interests = e.synth_interests;
    s.seq_len = e.synth_seq_len;
    s.noise = e.synth_noise;
    return s;
}

/// All constraint violations of a configuration (empty when valid).
inline std::vector<std::string> config_violations(const ExperimentConfig& e) {
    std::vector<std::string> v;
    if (e.pooling != "mean" && e.pooling != "last") v.push_back("pooling must be mean or last");
    bool mode_ok = true;
    try {
        parse_mode(e.aggregation);
    } catch (const ConfigError&) {
        mode_ok = false;
        v.push_back("aggregation must be one of deminet, multi_avg, hard_routing, moe");
    }
    if (mode_ok) {
        // Vocabulary sizes are data-dependent; placeholders keep them out of the report.
        for (auto& s : model_config(e, 2, 2).violations()) v.push_back(s);
    }
    if (!(e.lr > 0)) v.push_back("lr must be positive");
    if (!(e.adam_beta1 >= 0 && e.adam_beta1 < 1) || !(e.adam_beta2 >= 0 && e.adam_beta2 < 1)) v.push_back("adam betas must lie in [0, 1)");
    if (!(e.adam_eps > 0)) v.push_back("adam_eps must be positive");
    if (!(e.clip_norm >= 0)) v.push_back("clip_norm must be >= 0 (0 disables clipping)");
    if (e.batch_size == 0) v.push_back("batch_size must be positive");
    if (e.steps == 0) v.push_back("steps must be positive");
    if (e.eval_interval == 0) v.push_back("eval_interval must be positive");
    if (e.eval_batch == 0) v.push_back("eval_batch must be positive");
    if (e.threads == 0) v.push_back("threads must be positive");
    if (e.min_interactions < 2) v.push_back("min_interactions must be >= 2");
    if (!(e.split_fraction > 0 && e.split_fraction < 1)) v.push_back("split_fraction must lie in (0, 1)");
    if (e.synth_interests < 2) v.push_back("synth_interests must be >= 2");
    if (e.synth_items < e.synth_interests) v.push_back("synth_items must be >= synth_interests");
    if (!(e.synth_noise >= 0 && e.synth_noise <= 1)) v.push_back("synth_noise must lie in [0, 1]");
    try {
        parse_delimiter(e.delimiter);
    } catch (const ConfigError& ex) {
        v.push_back(ex.what());
    }
    if (e.user_col < 0 || e.item_col < 0 || e.category_col < 0 || e.time_col < 0) v.push_back("column indices must be >= 0");
    return v;
}

inline void validate_config(const ExperimentConfig& e) {
    const auto v = config_violations(e);
    if (v.empty()) return;
    std::string msg = "configuration invalid (" + std::to_string(v.size()) + " problem" + (v.size() > 1 ? "s" : "") + "):";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
}

}  // namespace deminet
