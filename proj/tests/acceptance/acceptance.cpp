// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --out DIR [--only 1,3,6] [--ablation-steps N]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "deminet/deminet.hpp"
#include "deminet/experiment.hpp"
#include "oracles/auc_oracle.hpp"
#include "oracles/graph_oracle.hpp"

using namespace deminet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

Tensor random_tensor(Shape shape, Rng& rng) {
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<real>(rng.normal(0, 1));
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor probe(Tape& t, const Tensor& y) {
    std::vector<real> w(y.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = real(0.3) + real(0.17) * real(i % 7) - real(0.05) * real(i % 3);
    return sum(t, mul(t, y, Tensor::from(y.shape(), w)));
}

Sample random_sample(Rng& rng, std::size_t n, std::size_t items, std::size_t cats, int label) {
    Sample s;
    s.user = 1;
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = static_cast<std::uint32_t>(1 + rng.below(items - 1));
        s.items.push_back(it);
        s.categories.push_back(static_cast<std::uint32_t>(1 + it % (cats - 1)));
    }
    s.target_item = static_cast<std::uint32_t>(1 + rng.below(items - 1));
    s.target_category = static_cast<std::uint32_t>(1 + s.target_item % (cats - 1));
    s.label = label;
    return s;
}

// 1 ------------------------------------------------------------------------

Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckReport micro = gradcheck_micro_model(7);

    Rng rng(21);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng), col = random_tensor({3, 1}, rng), row = random_tensor({1, 4}, rng);
    auto w = random_tensor({4, 3}, rng), wb = random_tensor({3}, rng);
    const std::size_t idx[4] = {2, 0, 2, 1};
    const int labels[3] = {1, 0, 1};
    BatchNorm1d bn = BatchNorm1d::create(4);
    for (auto& v : bn.gamma.mutable_values()) v = real(0.5 + rng.uniform());
    for (auto& v : bn.beta.mutable_values()) v = real(rng.normal(0, 0.3));
    const real slope = real(0.1);
    std::vector<std::pair<const char*, std::pair<std::function<Tensor(Tape&)>, std::vector<Tensor>>>> ops = {
        {"matmul", {[&](Tape& t) { return probe(t, matmul(t, a, b)); }, {a, b}}},
        {"transpose", {[&](Tape& t) { return probe(t, transpose(t, a)); }, {a}}},
        {"add", {[&](Tape& t) { return probe(t, add(t, a, c)); }, {a, c}}},
        {"mul", {[&](Tape& t) { return probe(t, mul(t, a, c)); }, {a, c}}},
        {"add_rowvec", {[&](Tape& t) { return probe(t, add_rowvec(t, a, bias)); }, {a, bias}}},
        {"dense_layer", {[&](Tape& t) { return probe(t, dense_layer(t, a, w, wb)); }, {a, w, wb}}},
        {"leaky_relu", {[&](Tape& t) { return probe(t, leaky_relu(t, a, slope)); }, {a}}},
        {"softmax", {[&](Tape& t) { return probe(t, softmax_lastdim(t, a)); }, {a}}},
        {"masked_softmax", {[&](Tape& t) { return probe(t, masked_softmax_lastdim(t, a, 3)); }, {a}}},
        {"concat", {[&](Tape& t) { return probe(t, concat_lastdim(t, {a, col, c})); }, {a, col, c}}},
        {"slice_cols", {[&](Tape& t) { return probe(t, slice_cols(t, a, 1, 2)); }, {a}}},
        {"stack_rows", {[&](Tape& t) { return probe(t, stack_rows(t, {row, slice_rows(t, a, 0, 1)})); }, {row, a}}},
        {"repeat_rows", {[&](Tape& t) { return probe(t, repeat_rows(t, row, 3)); }, {row}}},
        {"gather_rows", {[&](Tape& t) { return probe(t, gather_rows(t, a, idx)); }, {a}}},
        {"mean_rows", {[&](Tape& t) { return probe(t, mean_rows(t, a, 2)); }, {a}}},
        {"scale_rows", {[&](Tape& t) { return probe(t, scale_rows(t, a, col)); }, {a, col}}},
        {"batchnorm_train", {[&](Tape& t) { return probe(t, batchnorm_1d(t, a, bn, NormMode::train)); }, {a, bn.gamma, bn.beta}}},
        {"bce_mean", {[&](Tape& t) { return bce_mean(t, softmax_lastdim(t, slice_cols(t, a, 0, 2)), labels); }, {a}}},
        {"ssl_loss", {[&](Tape& t) { return probe(t, ssl_loss(t, softmax_lastdim(t, a), softmax_lastdim(t, c))); }, {a, c}}},
    };
    real worst_op = 0;
    std::string worst_name;
    for (auto& [name, fc] : ops) {
        const real e = check_gradients(fc.first, fc.second, real(1e-6));
        if (e > worst_op) {
            worst_op = e;
            worst_name = name;
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Outcome o;
    o.pass = micro.max_relative_error < 1e-3 && worst_op < 1e-4 && secs < 60;
    o.detail = "micro-model max rel err " + fmt(micro.max_relative_error) + " over " + std::to_string(micro.coordinates) +
               " coords (< 1e-3); worst op " + worst_name + " " + fmt(worst_op) + " (< 1e-4); " + fmt(secs, 3) + " s (< 60)";
    return o;
}

// 2 ------------------------------------------------------------------------

Outcome criterion_graph_oracle() {
    ModelConfig mc;
    mc.num_items = 501;
    mc.num_categories = 9;
    mc.embedding_std = real(0.3);
    Rng init(derive_seed(7, "init"));
    const DemiNetParams p = DemiNetParams::create(mc, init);
    Rng rng(derive_seed(7, "acceptance-graphs"));
    std::size_t mismatches = 0, sequences = 0, sim_edges = 0;
    for (double t : {0.6, 0.7, 0.8}) {
        for (int s = 0; s < 500; ++s) {
            const std::size_t n = 1 + rng.below(20);
            std::vector<double> h0(n * mc.d);
            std::vector<real> hr(n * mc.d);
            for (std::size_t i = 0; i < n; ++i) {
                // Narrow item range so repeated and similar items occur.
                const std::size_t item = 1 + rng.below(40), cat = 1 + item % 8;
                for (std::size_t k = 0; k < mc.d; ++k) {
                    hr[i * mc.d + k] = p.item_emb.at(item, k) + p.cat_emb.at(cat, k);
                    h0[i * mc.d + k] = hr[i * mc.d + k];
                }
            }
            const auto g = build_hetero_graph(hr, n, mc.d, mc.epsilon, static_cast<real>(t));
            const auto o = oracle::brute_force_graph(h0, n, mc.d, mc.epsilon, t);
            bool same = true;
            for (Relation r : kRelations) same = same && g.of(r) == o.of(r);
            mismatches += same ? 0 : 1;
            sim_edges += g.of(Relation::sim).size();
            ++sequences;
        }
    }
    return {mismatches == 0, std::to_string(sequences) + " sequences at t in {0.6,0.7,0.8}, " + std::to_string(mismatches) +
                                 " mismatches, " + std::to_string(sim_edges) + " similarity edges compared"};
}

// 3 ------------------------------------------------------------------------

Outcome criterion_simplex() {
    std::size_t forwards = 0, violations = 0;
    double worst = 0, ssl_min = 1e9, ssl_max = -1e9;
    auto check = [&](double sum, double tol = 1e-9) {
        const double err = std::abs(sum - 1);
        worst = std::max(worst, err);
        if (!(err <= tol)) ++violations;
    };
    for (real std_init : {real(0.01), real(0.5)}) {
        for (const char* mode : {"deminet", "hard_routing"}) {
            ModelConfig mc;
            mc.num_items = 501;
            mc.num_categories = 9;
            mc.embedding_std = std_init;
            mc.mode = parse_mode(mode);
            Rng init(derive_seed(7, "init", static_cast<std::uint64_t>(std_init * 100)));
            DemiNetParams p = DemiNetParams::create(mc, init);
            Rng rng(derive_seed(7, "acceptance-forwards", forwards));
            for (int batch = 0; batch < 5; ++batch) {
                Tape t(false);
                std::vector<Tensor> v, sm, tg;
                for (int i = 0; i < 50; ++i) {
                    const Sample s = random_sample(rng, 1 + rng.below(mc.n_max), mc.num_items, mc.num_categories, i % 2);
                    const ViewSeeds views{rng.next_u64(), rng.next_u64()};
                    HgaTrace trace;
                    const auto enc = encode_sample(t, p, mc, s, &views, &trace);
                    for (const auto& layer : trace.alpha)
                        for (const auto& rel : layer)
                            for (const auto& head : rel)
                                for (const auto& node : head) {
                                    if (node.empty()) continue;
                                    double z = 0;
                                    for (real x : node) z += x;
                                    check(z);
                                }
                    for (const auto& layer : trace.beta)
                        for (const auto& head : layer)
                            for (const auto& node : head) check(double(node[0]) + node[1] + node[2] + node[3]);
                    const auto& att = enc.matrix.attention;
                    for (std::size_t k = 0; k < mc.routes; ++k) {
                        double z = 0;
                        for (std::size_t j = 0; j < att.cols(); ++j) z += att.at(k, j);
                        check(z);
                    }
                    for (std::size_t k = 0; k < mc.routes; ++k) {
                        const double sv = enc.ssl[k];
                        ssl_min = std::min(ssl_min, sv);
                        ssl_max = std::max(ssl_max, sv);
                        if (!(sv >= 0 && sv <= std::log(2.0))) ++violations;
                    }
                    v.push_back(enc.interests);
                    sm.push_back(enc.summary);
                    tg.push_back(enc.target);
                    ++forwards;
                }
                for (bool training : {true, false}) {
                    const auto head = head_forward(t, p, mc, stack_rows(t, v), stack_rows(t, sm), stack_rows(t, tg), NormMode::eval, training);
                    for (std::size_t b = 0; b < head.probs.rows(); ++b) {
                        double wz = 0;
                        for (std::size_t k = 0; k < head.weights.cols(); ++k) wz += head.weights.at(b, k);
                        check(wz);
                        const double p0 = head.probs.at(b, 0), p1 = head.probs.at(b, 1);
                        check(p0 + p1);
                        if (!(p1 >= 0 && p1 <= 1)) ++violations;
                    }
                }
            }
        }
    }
    return {violations == 0 && forwards >= 1000,
            std::to_string(forwards) + " forwards, " + std::to_string(violations) + " violations, max |sum-1| " + fmt(worst) +
                ", ssl in [" + fmt(ssl_min) + ", " + fmt(ssl_max) + "] (bound [0, ln 2])"};
}

// 4 ------------------------------------------------------------------------

ExperimentConfig small_experiment() {
    ExperimentConfig c;
    c.synth_users = 200;
    c.synth_items = 100;
    c.batch_size = 32;
    c.steps = 40;
    c.eval_interval = 20;
    c.out_dir = "";
    return c;
}

Outcome criterion_regularizer_switches() {
    ModelConfig mc;
    mc.num_items = 101;
    mc.num_categories = 9;
    mc.rho = 0;
    Rng init(derive_seed(7, "init"));
    DemiNetParams p = DemiNetParams::create(mc, init);
    Rng rng(5);
    std::vector<Sample> batch;
    std::vector<ViewSeeds> views;
    for (int i = 0; i < 32; ++i) {
        batch.push_back(random_sample(rng, 1 + rng.below(mc.n_max), mc.num_items, mc.num_categories, i % 2));
        views.push_back({rng.next_u64(), rng.next_u64()});
    }
    const auto lb = compute_gradients(p, mc, batch, views);
    bool zero = true;
    for (real s : lb.ssl_per_route) zero = zero && s == 0;

    const ExperimentConfig base = small_experiment();
    const Dataset ds = load_dataset(base);
    ExperimentConfig off = base, b0 = base;
    off.ssl_off = true;
    b0.beta = 0;
    const auto r_off = run_experiment(off, ds);
    const auto r_b0 = run_experiment(b0, ds);
    const bool identical = r_off.metrics_lines == r_b0.metrics_lines;
    return {zero && identical, std::string("rho=0 ssl ") + (zero ? "exactly 0" : "NONZERO") + "; beta=0 vs ssl_off metrics " +
                                   (identical ? "bit-identical" : "DIFFER") + " over " + std::to_string(base.steps) + " steps"};
}

// 5 ------------------------------------------------------------------------

Outcome criterion_auc() {
    const std::vector<real> hs{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> hy{0, 0, 1, 1};
    const bool hand = std::abs(auc(hs, hy) - 0.75) < 1e-12;
    Rng rng(derive_seed(7, "acceptance-auc"));
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 2 + rng.below(200);
        std::vector<real> s(m);
        std::vector<int> y(m);
        for (std::size_t i = 0; i < m; ++i) {
            s[i] = trial % 3 == 0 ? real(rng.below(6)) : static_cast<real>(rng.uniform());
            y[i] = rng.bernoulli(0.3);
        }
        y[0] = 1;
        y[1] = 0;
        worst = std::max(worst, std::abs(auc(s, y) - oracle::pair_count_auc(std::vector<double>(s.begin(), s.end()), y)));
    }
    return {hand && worst < 1e-12, std::string("hand case ") + (hand ? "0.75" : "WRONG") + "; 1000 sets, max |diff| " + fmt(worst)};
}

// 6 ------------------------------------------------------------------------

Outcome criterion_ablation(const Dataset& ds, const std::string& out, std::size_t steps) {
    ExperimentConfig base;
    base.seed = 7;
    base.steps = steps;
    base.eval_interval = std::max<std::size_t>(1, steps / 8);
    base.out_dir = out + "/ablation";
    std::vector<std::pair<std::string, ExperimentConfig>> variants;
    for (auto& v : ablation_variants(base))
        if (v.first != "ssl_off") variants.push_back(v);
    const auto res = run_variants(variants, ds, base.out_dir + "/ablation.csv", nullptr);
    double full = 0, single = 0, dha = 0;
    for (const auto& r : res) {
        if (r.name == "full") full = r.run.best_auc;
        if (r.name == "single_expert") single = r.run.best_auc;
        if (r.name == "dha_off") dha = r.run.best_auc;
    }
    const bool pass = full >= single + 0.01 && full >= dha;
    return {pass, "best test AUC over " + std::to_string(steps) + " steps: full " + fmt(full) + ", single_expert " + fmt(single) +
                      " (need full >= " + fmt(single + 0.01) + "), dha_off " + fmt(dha)};
}

// 7 ------------------------------------------------------------------------

Outcome criterion_aggregation(const Dataset& ds, const std::string& out) {
    ExperimentConfig base;
    base.steps = 200;
    base.eval_interval = 100;
    base.out_dir = out + "/aggregation";
    const auto res = run_variants(aggregation_variants(base), ds, base.out_dir + "/aggregation.csv", nullptr);
    bool ok = res.size() == 4;
    std::string detail;
    for (const auto& r : res) {
        const bool good = r.run.valid_outputs && std::isfinite(r.run.final_log_loss);
        ok = ok && good;
        detail += r.name + (good ? " valid" : " INVALID") + " (auc " + fmt(r.run.final_auc, 4) + "); ";
    }
    return {ok, detail};
}

// 8 ------------------------------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion_determinism(const Dataset& ds, const std::string& out) {
    ExperimentConfig c;
    c.steps = 150;
    c.eval_interval = 50;
    c.out_dir = out + "/determinism/a";
    run_experiment(c, ds);
    c.out_dir = out + "/determinism/b";
    run_experiment(c, ds);
    const std::string a = slurp(out + "/determinism/a/metrics.csv"), b = slurp(out + "/determinism/b/metrics.csv");
    const bool same = !a.empty() && a == b;
    return {same, std::string("metrics.csv ") + (same ? "byte-identical" : "DIFFERS") + " across two runs (" +
                      std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string out = "acceptance_runs";
    std::vector<int> only;
    std::size_t ablation_steps = 1500;
    app.add_option("--out", out, "directory for run artifacts");
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--ablation-steps", ablation_steps, "training steps per ablation variant");
    CLI11_PARSE(app, argc, argv);
    std::filesystem::create_directories(out);

    const std::set<int> wanted(only.begin(), only.end());
    auto want = [&](int k) { return wanted.empty() || wanted.count(k) > 0; };

    std::optional<Dataset> synthetic;
    auto data = [&]() -> const Dataset& {
        if (!synthetic) synthetic = load_dataset(ExperimentConfig{});
        return *synthetic;
    };

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient correctness", criterion_gradients},
        {"graph construction matches brute force", criterion_graph_oracle},
        {"attention and output distributions on the simplex", criterion_simplex},
        {"regularizer switches", criterion_regularizer_switches},
        {"AUC matches pair counting", criterion_auc},
        {"ablation ordering on synthetic data", [&] { return criterion_ablation(data(), out, ablation_steps); }},
        {"all aggregation modes produce valid outputs", [&] { return criterion_aggregation(data(), out); }},
        {"training is deterministic", [&] { return criterion_determinism(data(), out); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int k = static_cast<int>(i + 1);
        if (!want(k)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << criteria[i].first << "): " << o.detail << " ["
                  << fmt(secs, 3) << " s]" << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion/criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
