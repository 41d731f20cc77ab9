#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deminet/config.hpp"
#include "deminet/data.hpp"
#include "deminet/gradcheck.hpp"
#include "deminet/metrics.hpp"
#include "deminet/model.hpp"
#include "deminet/optimizer.hpp"
#include "deminet/synth.hpp"

namespace deminet {

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::size_t num_categories = 0;
    std::int64_t split_time = 0;
    std::size_t records = 0;
    std::size_t malformed = 0;
    std::string source;
};

/// Filters, splits and samples a raw log. Users are filtered on the whole
/// log; vocabularies cover the filtered log.
inline Dataset prepare_dataset(const BehaviorLog& raw, const ExperimentConfig& cfg, const std::string& source) {
    const BehaviorLog log = filter_users(raw, cfg.min_interactions);
    if (log.records.empty()) throw DataError("no user has at least " + std::to_string(cfg.min_interactions) + " interactions");
    const SplitResult split = temporal_split(log, cfg.split_fraction);
    const Vocab vocab = Vocab::build(log);
    SampleOptions opt;
    opt.n_max = cfg.n_max;
    opt.min_interactions = 2;
    opt.neg_per_pos = cfg.neg_per_pos;
    Rng train_rng(derive_seed(cfg.seed, "negatives", 0));
    Rng test_rng(derive_seed(cfg.seed, "negatives", 1));
    Dataset ds;
    ds.train = build_samples(split.train, vocab, opt, train_rng);
    ds.test = build_test_samples(log, vocab, split.split_time, opt, test_rng);
    ds.num_users = vocab.num_users();
    ds.num_items = vocab.num_items();
    ds.num_categories = vocab.num_categories();
    ds.split_time = split.split_time;
    ds.records = log.records.size();
    ds.malformed = raw.malformed;
    ds.source = source;
    if (ds.train.empty()) throw DataError("no training samples after splitting");
    if (ds.test.empty()) throw DataError("no test samples after splitting");
    return ds;
}

inline SynthResult synth_from_config(const ExperimentConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, "data", 0));
    return synth_generate(synth_spec(cfg), rng);
}

inline std::string manifest_text(const Dataset& ds) {
    std::ostringstream os;
    os << "format = DMSAMP1\n"
       << "source = " << ds.source << "\n"
       << "records = " << ds.records << "\n"
       << "malformed = " << ds.malformed << "\n"
       << "num_users = " << ds.num_users << "\n"
       << "num_items = " << ds.num_items << "\n"
       << "num_categories = " << ds.num_categories << "\n"
       << "split_time = " << ds.split_time << "\n"
       << "train_samples = " << ds.train.size() << "\n"
       << "test_samples = " << ds.test.size() << "\n";
    return os.str();
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline void write_dataset(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    write_samples(dir + "/train.bin", ds.train);
    write_samples(dir + "/test.bin", ds.test);
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest_text(ds);
}

inline Dataset read_dataset(const std::string& dir) {
    const auto kv = read_key_values(dir + "/manifest.txt");
    auto num = [&](const char* key) -> std::int64_t {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError("manifest in " + dir + " lacks '" + key + "'");
        return std::stoll(it->second);
    };
    Dataset ds;
    ds.train = read_samples(dir + "/train.bin");
    ds.test = read_samples(dir + "/test.bin");
    ds.num_users = static_cast<std::size_t>(num("num_users"));
    ds.num_items = static_cast<std::size_t>(num("num_items"));
    ds.num_categories = static_cast<std::size_t>(num("num_categories"));
    ds.split_time = num("split_time");
    ds.records = static_cast<std::size_t>(num("records"));
    ds.malformed = static_cast<std::size_t>(num("malformed"));
    ds.source = kv.count("source") ? kv.at("source") : dir;
    if (ds.train.size() != static_cast<std::size_t>(num("train_samples")) ||
        ds.test.size() != static_cast<std::size_t>(num("test_samples"))) {
        throw DataError("sample files in " + dir + " disagree with the manifest");
    }
    return ds;
}

/// Prepared directory if `data_dir` is set, else a raw log if `log_path`
/// is set, else the synthetic scenario.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) return read_dataset(cfg.data_dir);
    if (!cfg.log_path.empty()) return prepare_dataset(parse_behavior_log(cfg.log_path, log_format(cfg)), cfg, cfg.log_path);
    return prepare_dataset(synth_from_config(cfg).log, cfg, "synthetic");
}

// ---------------------------------------------------------------------------

struct EvalResult {
    double auc = 0;
    double log_loss = 0;
    bool valid = true;  // every probability finite and inside [0, 1]
};

inline EvalResult evaluate(DemiNetParams& p, const ModelConfig& mc, std::span<const Sample> samples, std::size_t chunk) {
    const auto scores = predict(p, mc, samples, chunk);
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    EvalResult r;
    for (real s : scores) r.valid = r.valid && std::isfinite(s) && s >= 0 && s <= 1;
    r.auc = auc(scores, labels);
    r.log_loss = log_loss(scores, labels);
    return r;
}

struct RunResult {
    double final_auc = 0;
    double final_log_loss = 0;
    double best_auc = 0;
    std::size_t best_step = 0;
    std::size_t steps = 0;
    bool valid_outputs = true;
    std::string config_hash;
    std::vector<std::string> metrics_lines;  // without header
};

inline constexpr const char* kMetricsHeader = "step,ce,ssl_total,train_auc,eval_auc,eval_logloss";

namespace detail {

inline std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

/// Trains on `ds` per `cfg`, evaluating every `eval_interval` steps and at
/// the end. Writes metrics.csv, best.ckpt and summary.txt into `cfg.out_dir`
/// unless it is empty. Progress lines go to `log` when non-null.
inline RunResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds, std::ostream* log = nullptr) {
    validate_config(cfg);
    const ModelConfig mc = model_config(cfg, ds.num_items, ds.num_categories);
    mc.validate();
    Rng init(derive_seed(cfg.seed, "init"));
    DemiNetParams params = DemiNetParams::create(mc, init);
    auto trainable = params.trainable();
    Adam adam(adam_config(cfg), trainable);

    const bool write = !cfg.out_dir.empty();
    std::ofstream metrics;
    if (write) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics.open(cfg.out_dir + "/metrics.csv");
        if (!metrics) throw IoError("cannot write " + cfg.out_dir + "/metrics.csv");
        metrics << kMetricsHeader << '\n';
    }

    RunResult res;
    res.config_hash = config_hash(cfg);
    std::vector<NamedTensor> best;
    res.best_auc = -1;

    std::vector<std::size_t> order(ds.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t epoch = 0, cursor = 0;
    Rng shuffle_rng(derive_seed(cfg.seed, "data", 1 + epoch));
    detail::shuffle(order, shuffle_rng);

    const std::size_t bsz = std::min(cfg.batch_size, ds.train.size());
    std::vector<Sample> batch;
    std::vector<ViewSeeds> views;
    std::vector<real> p_click;
    std::vector<real> window_scores;
    std::vector<int> window_labels;
    double window_ce = 0, window_ssl = 0;
    std::size_t window_steps = 0;

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        if (cursor + bsz > order.size()) {
            ++epoch;
            cursor = 0;
            Rng r(derive_seed(cfg.seed, "data", 1 + epoch));
            detail::shuffle(order, r);
        }
        batch.clear();
        views.clear();
        for (std::size_t i = 0; i < bsz; ++i) {
            batch.push_back(ds.train[order[cursor + i]]);
            views.push_back(ViewSeeds{derive_seed(cfg.seed, "dropout-view-1", step, i), derive_seed(cfg.seed, "dropout-view-2", step, i)});
        }
        cursor += bsz;

        for (auto& t : trainable) t.zero_grad();
        const LossBreakdown lb = compute_gradients(params, mc, batch, views, cfg.threads, &p_click);
        if (!std::isfinite(lb.total)) throw NumericError("training loss is not finite at step " + std::to_string(step));
        clip_grad_norm(trainable, static_cast<real>(cfg.clip_norm));
        adam.step();

        window_ce += lb.ce;
        for (real s : lb.ssl_per_route) window_ssl += s;
        ++window_steps;
        for (std::size_t i = 0; i < bsz; ++i) {
            window_scores.push_back(p_click[i]);
            window_labels.push_back(batch[i].label);
        }

        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            const EvalResult ev = evaluate(params, mc, ds.test, cfg.eval_batch);
            res.valid_outputs = res.valid_outputs && ev.valid;
            double train_auc = std::nan("");
            try {
                train_auc = auc(window_scores, window_labels);
            } catch (const ContractError&) {
            }
            const std::string line = std::to_string(step) + "," + detail::fmt6(window_ce / window_steps) + "," +
                                     detail::fmt6(window_ssl / window_steps) + "," + detail::fmt6(train_auc) + "," +
                                     detail::fmt6(ev.auc) + "," + detail::fmt6(ev.log_loss);
            res.metrics_lines.push_back(line);
            if (write) metrics << line << '\n' << std::flush;
            if (log) *log << line << '\n' << std::flush;
            if (ev.auc > res.best_auc) {
                res.best_auc = ev.auc;
                res.best_step = step;
                best = snapshot(params);
            }
            res.final_auc = ev.auc;
            res.final_log_loss = ev.log_loss;
            window_ce = window_ssl = 0;
            window_steps = 0;
            window_scores.clear();
            window_labels.clear();
        }
    }
    res.steps = cfg.steps;

    if (write) {
        write_checkpoint(cfg.out_dir + "/best.ckpt", best);
        std::ofstream os(cfg.out_dir + "/summary.txt");
        if (!os) throw IoError("cannot write summary in " + cfg.out_dir);
        os << "final_auc = " << detail::fmt6(res.final_auc) << "\n"
           << "final_logloss = " << detail::fmt6(res.final_log_loss) << "\n"
           << "best_auc = " << detail::fmt6(res.best_auc) << "\n"
           << "best_step = " << res.best_step << "\n"
           << "steps = " << res.steps << "\n"
           << "seed = " << cfg.seed << "\n"
           << "config_hash = " << res.config_hash << "\n"
           << "aggregation = " << cfg.aggregation << "\n"
           << "dha_off = " << (cfg.dha_off ? "true" : "false") << "\n"
           << "ssl_off = " << (cfg.ssl_off ? "true" : "false") << "\n"
           << "single_expert = " << (cfg.single_expert ? "true" : "false") << "\n"
           << "train_samples = " << ds.train.size() << "\n"
           << "test_samples = " << ds.test.size() << "\n"
           << "valid_outputs = " << (res.valid_outputs ? "true" : "false") << "\n";
        std::ofstream cfg_out(cfg.out_dir + "/config.txt");
        cfg_out << config_to_text(cfg);
    }
    return res;
}

/// Builds the model for `cfg`/`ds` and loads a checkpoint into it.
inline DemiNetParams load_model(const ExperimentConfig& cfg, const Dataset& ds, const std::string& checkpoint) {
    const ModelConfig mc = model_config(cfg, ds.num_items, ds.num_categories);
    Rng init(derive_seed(cfg.seed, "init"));
    DemiNetParams p = DemiNetParams::create(mc, init);
    restore(p, read_checkpoint(checkpoint));
    return p;
}

/// One CSV row per (sample, route): metadata, the interest vector and the
/// route's attention row over positions (zero-padded to n_max).
inline void export_interests(DemiNetParams& p, const ModelConfig& mc, std::span<const Sample> samples, std::ostream& os) {
    os << "sample,user,target_item,label,route";
    for (std::size_t c = 0; c < mc.d; ++c) os << ",v" << c;
    for (std::size_t i = 0; i < mc.n_max; ++i) os << ",a" << i;
    os << '\n';
    char buf[40];
    for (std::size_t s = 0; s < samples.size(); ++s) {
        Tape t(false);
        const auto enc = encode_sample(t, p, mc, samples[s]);
        const auto& V = enc.matrix.vectors;
        const auto& A = enc.matrix.attention;
        const std::size_t n = A.cols();
        for (std::size_t k = 0; k < mc.routes; ++k) {
            os << s << ',' << samples[s].user << ',' << samples[s].target_item << ',' << samples[s].label << ',' << k;
            for (std::size_t c = 0; c < mc.d; ++c) {
                std::snprintf(buf, sizeof buf, ",%.17g", V[k * mc.d + c]);
                os << buf;
            }
            for (std::size_t i = 0; i < mc.n_max; ++i) {
                std::snprintf(buf, sizeof buf, ",%.17g", i < n ? A[k * n + i] : real(0));
                os << buf;
            }
            os << '\n';
        }
    }
}

struct VariantResult {
    std::string name;
    RunResult run;
};

/// The four ablation rows: full model, no graph attention, no
/// self-supervision, single expert.
inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    auto add = [&](const std::string& name, auto&& tweak) {
        ExperimentConfig c = base;
        c.dha_off = c.ssl_off = c.single_expert = false;
        tweak(c);
        if (!base.out_dir.empty()) c.out_dir = base.out_dir + "/" + name;
        out.emplace_back(name, c);
    };
    add("full", [](ExperimentConfig&) {});
    add("dha_off", [](ExperimentConfig& c) { c.dha_off = true; });
    add("ssl_off", [](ExperimentConfig& c) { c.ssl_off = true; });
    add("single_expert", [](ExperimentConfig& c) { c.single_expert = true; });
    return out;
}

inline std::vector<std::pair<std::string, ExperimentConfig>> aggregation_variants(const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    for (const char* mode : {"deminet", "multi_avg", "hard_routing", "moe"}) {
        ExperimentConfig c = base;
        c.aggregation = mode;
        c.single_expert = false;
        if (!base.out_dir.empty()) c.out_dir = base.out_dir + "/" + mode;
        out.emplace_back(mode, c);
    }
    return out;
}

inline std::vector<VariantResult> run_variants(const std::vector<std::pair<std::string, ExperimentConfig>>& variants,
                                               const Dataset& ds, const std::string& table_path, std::ostream* log) {
    std::vector<VariantResult> out;
    for (const auto& [name, c] : variants) {
        if (log) *log << "# variant " << name << '\n';
        out.push_back(VariantResult{name, run_experiment(c, ds, log)});
    }
    if (!table_path.empty()) {
        std::ofstream os(table_path);
        if (!os) throw IoError("cannot write " + table_path);
        os << "variant,best_auc,best_step,final_auc,final_logloss,valid_outputs\n";
        for (const auto& v : out) {
            os << v.name << ',' << detail::fmt6(v.run.best_auc) << ',' << v.run.best_step << ',' << detail::fmt6(v.run.final_auc)
               << ',' << detail::fmt6(v.run.final_log_loss) << ',' << (v.run.valid_outputs ? "true" : "false") << '\n';
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Micro-model gradient check: n = 4, d = 8, 2 heads, 2 routes, 2 layers,
/// one sample, both dropout views active, batch norm in inference mode.
/// Every trainable parameter is perturbed.
inline GradCheckReport gradcheck_micro_model(std::uint64_t seed, real step = real(1e-6)) {
    ModelConfig mc;
    mc.num_items = 7;
    mc.num_categories = 3;
    mc.d = 8;
    mc.heads = 2;
    mc.layers = 2;
    mc.routes = 2;
    mc.n_max = 4;
    mc.interest_hidden = 8;
    mc.expert_hidden1 = 8;
    mc.expert_hidden2 = 4;
    mc.confi_hidden1 = 8;
    mc.confi_hidden2 = 4;
    mc.epsilon = 1;
    mc.threshold = real(0.3);
    mc.rho = real(0.4);
    mc.beta = real(0.5);
    mc.embedding_std = real(0.5);
    Rng rng(derive_seed(seed, "init"));
    DemiNetParams p = DemiNetParams::create(mc, rng);
    // Non-trivial inference statistics so the normalization path is exercised.
    for (auto& bn : p.experts.norms) {
        auto m = bn.running_mean.mutable_values();
        auto v = bn.running_var.mutable_values();
        for (std::size_t j = 0; j < m.size(); ++j) {
            m[j] = static_cast<real>(rng.normal(0, 0.1));
            v[j] = static_cast<real>(0.5 + rng.uniform());
        }
    }
    Sample s;
    s.items = {1, 2, 3, 4};
    s.categories = {1, 1, 2, 2};
    s.target_item = 5;
    s.target_category = 1;
    s.label = 1;
    const std::vector<Sample> batch{s};
    const std::vector<ViewSeeds> views{ViewSeeds{derive_seed(seed, "dropout-view-1"), derive_seed(seed, "dropout-view-2")}};
    auto f = [&](Tape& t) { return forward_batch(t, p, mc, batch, views, NormMode::eval, true).loss; };
    return check_gradients_report(f, p.trainable(), step);
}

}  // namespace deminet
