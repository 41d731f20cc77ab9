// deminet command-line front end.
//
//   deminet <verb> [--config FILE] [--<key> VALUE ...]
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deminet/deminet.hpp"
#include "deminet/experiment.hpp"

namespace {

using namespace deminet;

struct VerbOptions {
    std::string config_file;
    std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* sub, VerbOptions& opts) {
    sub->add_option("--config", opts.config_file, "flat key = value configuration file");
    for (const auto& key : config_key_names()) {
        sub->add_option("--" + key, opts.values[key], "override '" + key + "'");
    }
}

ExperimentConfig resolve(CLI::App* sub, const VerbOptions& opts) {
    ConfigBuilder b;
    if (!opts.config_file.empty()) b.load_file(opts.config_file);
    for (const auto& [key, value] : opts.values) {
        if (sub->get_option("--" + key)->count() > 0) b.set(key, value, "--" + key);
    }
    if (!b.errors().empty()) {
        std::string msg = "configuration invalid:";
        for (const auto& e : b.errors()) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    validate_config(b.config());
    return b.config();
}

void print_dataset(const Dataset& ds) {
    std::cout << "dataset " << ds.source << ": " << ds.train.size() << " train / " << ds.test.size() << " test samples, "
              << ds.num_items - 1 << " items, " << ds.num_categories - 1 << " categories\n";
}

int verb_synth(const ExperimentConfig& cfg) {
    const auto syn = synth_from_config(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/log.tsv");
    if (!os) throw IoError("cannot write " + cfg.out_dir + "/log.tsv");
    write_behavior_log(os, syn.log);
    write_synth_truth(cfg.out_dir + "/truth.csv", syn.truth);
    std::cout << "wrote " << syn.log.records.size() << " records to " << cfg.out_dir << "/log.tsv\n";
    return 0;
}

int verb_prepare(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.data_dir.clear();
    const Dataset ds = load_dataset(c);
    write_dataset(cfg.out_dir, ds);
    print_dataset(ds);
    std::cout << "wrote " << cfg.out_dir << "/{train.bin,test.bin,manifest.txt}\n";
    return 0;
}

int verb_train(const ExperimentConfig& cfg) {
    const Dataset ds = load_dataset(cfg);
    print_dataset(ds);
    std::cout << kMetricsHeader << '\n';
    const RunResult r = run_experiment(cfg, ds, &std::cout);
    std::cout << "final_auc " << r.final_auc << " final_logloss " << r.final_log_loss << " best_auc " << r.best_auc
              << " (step " << r.best_step << ")\n";
    return 0;
}

int verb_evaluate(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
    const Dataset ds = load_dataset(cfg);
    DemiNetParams p = load_model(cfg, ds, cfg.checkpoint);
    const ModelConfig mc = model_config(cfg, ds.num_items, ds.num_categories);
    const EvalResult ev = evaluate(p, mc, ds.test, cfg.eval_batch);
    std::cout << "auc = " << ev.auc << "\nlogloss = " << ev.log_loss << "\nvalid_outputs = " << (ev.valid ? "true" : "false")
              << "\n";
    return 0;
}

int verb_ablate(const ExperimentConfig& cfg) {
    const Dataset ds = load_dataset(cfg);
    print_dataset(ds);
    std::filesystem::create_directories(cfg.out_dir);
    const auto res = run_variants(ablation_variants(cfg), ds, cfg.out_dir + "/ablation.csv", &std::cout);
    for (const auto& v : res) std::cout << v.name << " best_auc " << v.run.best_auc << " final_auc " << v.run.final_auc << '\n';
    return 0;
}

int verb_bench(const ExperimentConfig& cfg) {
    const Dataset ds = load_dataset(cfg);
    print_dataset(ds);
    std::filesystem::create_directories(cfg.out_dir);
    const auto res = run_variants(aggregation_variants(cfg), ds, cfg.out_dir + "/aggregation.csv", &std::cout);
    bool ok = true;
    for (const auto& v : res) {
        std::cout << v.name << " best_auc " << v.run.best_auc << " final_auc " << v.run.final_auc
                  << " valid_outputs " << (v.run.valid_outputs ? "true" : "false") << '\n';
        ok = ok && v.run.valid_outputs;
    }
    if (!ok) throw NumericError("an aggregation mode produced invalid probabilities");
    return 0;
}

int verb_gradcheck(const ExperimentConfig& cfg) {
    const GradCheckReport r = gradcheck_micro_model(cfg.seed);
    std::cout << "coordinates = " << r.coordinates << "\nmax_relative_error = " << r.max_relative_error << '\n';
    if (r.max_relative_error >= 1e-3) {
        std::cerr << "gradient check failed (tensor " << r.worst_tensor << ", index " << r.worst_index << ")\n";
        return 4;
    }
    return 0;
}

int verb_export(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("export-interests needs --checkpoint");
    const Dataset ds = load_dataset(cfg);
    DemiNetParams p = load_model(cfg, ds, cfg.checkpoint);
    const ModelConfig mc = model_config(cfg, ds.num_items, ds.num_categories);
    const std::size_t n = std::min(cfg.export_limit, ds.test.size());
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/interests.csv";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    export_interests(p, mc, std::span<const Sample>(ds.test).first(n), os);
    std::cout << "wrote " << n * mc.routes << " interest rows to " << path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DemiNet click-through-rate model: data preparation, training and evaluation"};
    app.require_subcommand(1);
    struct Verb {
        const char* name;
        const char* help;
        int (*run)(const ExperimentConfig&);
    };
    const std::vector<Verb> verbs = {
        {"synth", "write a planted-interest synthetic log (out_dir/log.tsv, truth.csv)", verb_synth},
        {"prepare-data", "filter, split and sample a log into out_dir", verb_prepare},
        {"train", "train and write metrics.csv, best.ckpt, summary.txt", verb_train},
        {"evaluate", "score a checkpoint on the test samples", verb_evaluate},
        {"ablate", "train the four ablation variants", verb_ablate},
        {"bench-aggregation", "train the four aggregation modes", verb_bench},
        {"gradcheck", "finite-difference check of a micro model", verb_gradcheck},
        {"export-interests", "write per-sample interest vectors and attention rows", verb_export},
    };
    std::vector<VerbOptions> opts(verbs.size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < verbs.size(); ++i) {
        subs.push_back(app.add_subcommand(verbs[i].name, verbs[i].help));
        add_config_flags(subs.back(), opts[i]);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        for (std::size_t i = 0; i < verbs.size(); ++i) {
            if (subs[i]->parsed()) return verbs[i].run(resolve(subs[i], opts[i]));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
