// labelkit command-line front end: annotate corpora through a chat endpoint
// (or the bundled mock), filter labels, train and evaluate the built-in
// classifier, run experiment plans, and drive the sampling simulator.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "labelkit/annotator.hpp"
#include "labelkit/classifier.hpp"
#include "labelkit/corpus.hpp"
#include "labelkit/experiments.hpp"
#include "labelkit/metrics.hpp"
#include "labelkit/mitigation.hpp"
#include "labelkit/mock_server.hpp"
#include "labelkit/theory_sim.hpp"

namespace fs = std::filesystem;
using namespace labelkit;

namespace {

struct GlobalConfig {
    std::string config_path;
    std::string output_dir;
    std::string cache_path;
    EndpointConfig endpoint;
    uint64_t master_seed = 1;
    int verbosity = 1;
};

void apply_config_file(GlobalConfig& g) {
    if (g.config_path.empty()) return;
    std::ifstream in(g.config_path);
    if (!in) throw ConfigError("cannot open config file: " + g.config_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(g.config_path + ": bad config: " + e.what());
    }
    // File values fill in anything a flag did not set.
    if (g.output_dir.empty()) g.output_dir = j.value("output_dir", std::string{});
    if (g.cache_path.empty()) g.cache_path = j.value("cache_path", std::string{});
    if (j.contains("endpoint")) {
        const auto& e = j["endpoint"];
        if (g.endpoint.base_url == EndpointConfig{}.base_url)
            g.endpoint.base_url = e.value("base_url", g.endpoint.base_url);
        if (g.endpoint.model == EndpointConfig{}.model)
            g.endpoint.model = e.value("model", g.endpoint.model);
        g.endpoint.api_key_env = e.value("api_key_env", g.endpoint.api_key_env);
        g.endpoint.timeout_s = e.value("timeout_s", g.endpoint.timeout_s);
        g.endpoint.max_in_flight = e.value("max_in_flight", g.endpoint.max_in_flight);
        g.endpoint.max_retries = e.value("max_retries", g.endpoint.max_retries);
        g.endpoint.retry_base_ms = e.value("retry_base_ms", g.endpoint.retry_base_ms);
    }
    if (j.contains("master_seed")) g.master_seed = j["master_seed"].get<uint64_t>();
}

void echo_config(const fs::path& output_dir, const nlohmann::json& effective) {
    fs::create_directories(output_dir);
    std::ofstream out(output_dir / "config_echo.json");
    out << effective.dump(2) << "\n";
}

std::vector<AnnotationRecord> load_records(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open records file: " + path.string());
    std::vector<AnnotationRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": bad record: " + e.what());
        }
    }
    return records;
}

void save_records(const std::vector<AnnotationRecord>& records, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    for (const auto& r : records) out << record_to_json(r).dump() << "\n";
}

// Environment override hook for the endpoint base URL.
void apply_env_overrides(EndpointConfig& endpoint) {
    if (const char* url = std::getenv("LABELKIT_BASE_URL"); url && *url) endpoint.base_url = url;
}

int run(int argc, char** argv) {
    CLI::App app{"labelkit: a workbench for LLM-annotated text classification pipelines"};
    app.require_subcommand(1);
    GlobalConfig g;
    app.add_option("--config", g.config_path, "JSON config file (flags take precedence)");
    app.add_option("--output-dir", g.output_dir, "directory for outputs");
    app.add_option("--cache", g.cache_path, "annotation cache file");
    app.add_option("--endpoint-url", g.endpoint.base_url, "chat endpoint base URL");
    app.add_option("--model", g.endpoint.model, "endpoint model name");
    app.add_option("--seed", g.master_seed, "master seed");
    app.add_option("-v,--verbosity", g.verbosity, "0 = quiet, 1 = progress");

    // --- annotate ---------------------------------------------------------
    auto* cmd_annotate = app.add_subcommand("annotate", "annotate a corpus via the endpoint");
    std::string an_input, an_labels, an_task, an_demos, an_records_out = "records.jsonl";
    size_t an_num_demos = 3;
    uint64_t an_demo_seed = 0;
    size_t an_ensemble_k = 0;
    std::string an_invalid_policy = "strict";
    cmd_annotate->add_option("--input", an_input, "corpus file to annotate")->required();
    cmd_annotate->add_option("--label-space", an_labels, "comma list or file of labels")->required();
    cmd_annotate->add_option("--task", an_task, "task description for the prompt")->required();
    cmd_annotate->add_option("--demos", an_demos, "gold demonstration corpus file")->required();
    cmd_annotate->add_option("--num-demos", an_num_demos, "demonstrations per prompt");
    cmd_annotate->add_option("--demo-seed", an_demo_seed, "demonstration sampling seed");
    cmd_annotate->add_option("--records-out", an_records_out, "records file (inside output dir)");
    cmd_annotate->add_option("--invalid-policy", an_invalid_policy, "strict | uniform_random")
        ->check(CLI::IsMember({"strict", "uniform_random"}));
    cmd_annotate->add_option("--ensemble-k", an_ensemble_k, "k-pass ensemble annotation (0 = single pass)");

    // --- filter -----------------------------------------------------------
    auto* cmd_filter = app.add_subcommand("filter", "entropy-rank replacement of annotations");
    std::string fl_records, fl_gold, fl_labels;
    double fl_alpha = 25;
    cmd_filter->add_option("--records", fl_records, "annotation records file")->required();
    cmd_filter->add_option("--input", fl_gold, "gold corpus file")->required();
    cmd_filter->add_option("--label-space", fl_labels, "comma list or file of labels")->required();
    cmd_filter->add_option("--alpha", fl_alpha, "top percent of entropies to replace");

    // --- ensemble ---------------------------------------------------------
    auto* cmd_ensemble = app.add_subcommand("ensemble", "consistency-resolve ensemble records");
    std::string en_records, en_gold, en_labels;
    bool en_majority = false;
    cmd_ensemble->add_option("--records", en_records, "ensemble records file")->required();
    cmd_ensemble->add_option("--input", en_gold, "gold corpus file")->required();
    cmd_ensemble->add_option("--label-space", en_labels, "comma list or file of labels")->required();
    cmd_ensemble->add_flag("--majority-vote", en_majority, "resolve flips by majority instead of gold");

    // --- train ------------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "train the built-in classifier");
    std::string tr_train, tr_val, tr_labels, tr_model_out = "model.bin";
    TrainConfig tr_cfg;
    cmd_train->add_option("--train", tr_train, "labeled training corpus")->required();
    cmd_train->add_option("--validation", tr_val, "labeled validation corpus")->required();
    cmd_train->add_option("--label-space", tr_labels, "comma list or file of labels")->required();
    cmd_train->add_option("--model-out", tr_model_out, "model file (inside output dir)");
    cmd_train->add_option("--epochs", tr_cfg.epochs);
    cmd_train->add_option("--batch-size", tr_cfg.batch_size);
    cmd_train->add_option("--eval-batch-size", tr_cfg.eval_batch_size);
    cmd_train->add_option("--learning-rate", tr_cfg.learning_rate);
    cmd_train->add_option("--weight-decay", tr_cfg.weight_decay);
    cmd_train->add_option("--warmup-ratio", tr_cfg.warmup_ratio);
    cmd_train->add_option("--hidden-dim", tr_cfg.hidden_dim);
    cmd_train->add_option("--hash-dim", tr_cfg.hash_dim);
    cmd_train->add_option("--ngram-orders", tr_cfg.ngram_orders);

    // --- evaluate ---------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("evaluate", "score a model on a gold corpus");
    std::string ev_model, ev_input;
    cmd_eval->add_option("--model", ev_model, "model file")->required();
    cmd_eval->add_option("--input", ev_input, "gold corpus file")->required();

    // --- experiment plans ---------------------------------------------------
    std::string plan_path;
    auto* cmd_baseline = app.add_subcommand("baseline", "gold-vs-synthetic stability experiment");
    cmd_baseline->add_option("--plan", plan_path, "experiment plan JSON")->required();
    auto* cmd_mitigate = app.add_subcommand("mitigate", "mitigation comparison experiment");
    cmd_mitigate->add_option("--plan", plan_path, "experiment plan JSON")->required();
    auto* cmd_curve = app.add_subcommand("curve", "learning-curve / plateau experiment");
    cmd_curve->add_option("--plan", plan_path, "experiment plan JSON")->required();

    // --- simulate -----------------------------------------------------------
    auto* cmd_sim = app.add_subcommand("simulate", "sampling simulation of the error decomposition");
    std::string sim_spec_path;
    std::vector<size_t> sim_grid;
    cmd_sim->add_option("--spec", sim_spec_path, "simulation spec JSON")->required();
    cmd_sim->add_option("--n-grid", sim_grid, "optional sample-size grid for a plateau curve");

    // --- report -------------------------------------------------------------
    auto* cmd_report = app.add_subcommand("report", "re-render a table from metrics.csv");
    std::string rp_metrics;
    bool rp_cost = false;
    cmd_report->add_option("--metrics", rp_metrics, "metrics.csv produced by an experiment")
        ->required();
    cmd_report->add_flag("--cost", rp_cost, "include cost ledger columns");

    // --- mock-serve ---------------------------------------------------------
    auto* cmd_mock = app.add_subcommand("mock-serve", "run the scripted mock endpoint");
    std::string mk_script;
    int mk_port = 8321;
    std::string mk_host = "127.0.0.1";
    cmd_mock->add_option("--script", mk_script, "mock script file")->required();
    cmd_mock->add_option("--port", mk_port, "port to listen on");
    cmd_mock->add_option("--host", mk_host, "host to bind");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }
    apply_config_file(g);
    apply_env_overrides(g.endpoint);
    if (g.output_dir.empty()) g.output_dir = "out";
    const fs::path outdir = g.output_dir;

    if (*cmd_annotate) {
        LabelSpace space = LabelSpace::from_spec(an_labels);
        Corpus corpus = load_corpus(an_input, space);
        Corpus demos = load_corpus(an_demos, space, "demos");
        PromptSpec spec{an_task, space, an_num_demos, demos, an_demo_seed};
        AnnotationCache cache = g.cache_path.empty() ? AnnotationCache{}
                                                     : AnnotationCache::open(g.cache_path);
        AnnotateOptions options;
        options.invalid_policy = an_invalid_policy == "strict" ? InvalidPolicy::strict
                                                               : InvalidPolicy::uniform_random;
        if (g.verbosity > 0) options.progress = &std::cerr;
        AnnotationRun result =
            an_ensemble_k >= 2
                ? ensemble_annotate(corpus, spec, g.endpoint, cache, an_ensemble_k, options)
                : annotate_corpus(corpus, spec, g.endpoint, cache, options);
        fs::create_directories(outdir);
        save_records(result.records, outdir / an_records_out);
        echo_config(outdir, nlohmann::json{{"subcommand", "annotate"},
                                           {"input", an_input},
                                           {"label_space", space.names()},
                                           {"task", an_task},
                                           {"demos", an_demos},
                                           {"num_demos", an_num_demos},
                                           {"demo_seed", an_demo_seed},
                                           {"ensemble_k", an_ensemble_k},
                                           {"invalid_policy", an_invalid_policy},
                                           {"cache", g.cache_path},
                                           {"endpoint_url", g.endpoint.base_url},
                                           {"model", g.endpoint.model}});
        std::cout << "annotated " << result.records.size() << " examples ("
                  << result.stats.cache_hits << " cached, " << result.stats.requests
                  << " requests, " << result.stats.invalid << " invalid)\n";
        return 0;
    }

    if (*cmd_filter || *cmd_ensemble) {
        const bool is_filter = static_cast<bool>(*cmd_filter);
        LabelSpace space = LabelSpace::from_spec(is_filter ? fl_labels : en_labels);
        Corpus gold = load_corpus(is_filter ? fl_gold : en_gold, space);
        auto records = load_records(is_filter ? fl_records : en_records);
        PatchedLabels patched = is_filter ? entropy_rank_filter(records, gold, fl_alpha)
                                          : consistency_resolve(records, gold, en_majority);
        fs::create_directories(outdir);
        save_patched_labels(patched, gold, records, outdir / "labels.jsonl",
                            outdir / "audit.jsonl");
        auto audit = mixture_audit(patched, space.size());
        nlohmann::json summary{{"replaced", patched.replacement_count},
                               {"total", patched.labels.size()},
                               {"replacement_fraction", audit.replacement_fraction},
                               {"llm_inferences", patched.cost.llm_inferences},
                               {"gold_annotations", patched.cost.gold_annotations}};
        std::ofstream(outdir / "summary.json") << summary.dump(2) << "\n";
        echo_config(outdir, nlohmann::json{{"subcommand", is_filter ? "filter" : "ensemble"},
                                           {"records", is_filter ? fl_records : en_records},
                                           {"input", is_filter ? fl_gold : en_gold},
                                           {"alpha", fl_alpha},
                                           {"majority_vote", en_majority}});
        std::cout << summary.dump() << "\n";
        return 0;
    }

    if (*cmd_train) {
        LabelSpace space = LabelSpace::from_spec(tr_labels);
        Corpus train_c = load_corpus(tr_train, space, "train");
        Corpus val_c = load_corpus(tr_val, space, "validation");
        tr_cfg.seed = g.master_seed;
        auto outcome = train(train_c, val_c, tr_cfg);
        fs::create_directories(outdir);
        save_model(outcome.model, outdir / tr_model_out);
        nlohmann::json echo = train_config_to_json(tr_cfg);
        echo["subcommand"] = "train";
        echo["train"] = tr_train;
        echo["validation"] = tr_val;
        echo_config(outdir, echo);
        std::cout << "best epoch " << outcome.best_epoch;
        if (!outcome.history.empty())
            std::cout << " (validation macro-F1 "
                      << outcome.history[outcome.best_epoch].val_macro_f1 << ")";
        std::cout << "\nmodel written to " << (outdir / tr_model_out).string() << "\n";
        return 0;
    }

    if (*cmd_eval) {
        ClassifierModel model = load_model(ev_model);
        Corpus corpus = load_corpus(ev_input, model.labels, "test");
        auto pred = predict(model, corpus);
        std::vector<int> gold;
        for (const auto& ex : corpus.examples()) {
            if (!ex.gold_label) throw Error("evaluate: example " + ex.id + " has no gold label");
            gold.push_back(*ex.gold_label);
        }
        auto [acc, f1] = accuracy_and_macro_f1(pred.labels, gold, static_cast<int>(model.labels.size()));
        fs::create_directories(outdir);
        std::ofstream preds(outdir / "predictions.csv");
        preds << "id,prediction,gold\n";
        for (size_t i = 0; i < corpus.size(); ++i)
            preds << corpus.at(i).id << ',' << model.labels.name(pred.labels[i]) << ','
                  << model.labels.name(gold[i]) << "\n";
        echo_config(outdir, nlohmann::json{{"subcommand", "evaluate"},
                                           {"model", ev_model},
                                           {"input", ev_input}});
        std::cout << "accuracy " << acc << "\nmacro_f1 " << f1 << "\n";
        return 0;
    }

    if (*cmd_baseline || *cmd_mitigate || *cmd_curve) {
        ExperimentPlan plan = ExperimentPlan::from_file(plan_path);
        if (!g.output_dir.empty() && g.output_dir != "out") plan.output_dir = g.output_dir;
        if (g.master_seed != 1) plan.master_seed = g.master_seed;
        if (*cmd_curve) {
            auto curve = run_curve(plan);
            for (const auto& cc : curve.conditions)
                std::cout << cc.condition << ": tail slope " << cc.tail_slope
                          << (cc.plateau_flag ? " [plateau]" : "") << "\n";
        } else {
            auto report = *cmd_mitigate ? run_mitigation(plan) : run_baseline(plan);
            std::cout << report.table_text;
        }
        return 0;
    }

    if (*cmd_sim) {
        SimSpec spec = SimSpec::from_file(sim_spec_path);
        fs::create_directories(outdir);
        if (!sim_grid.empty()) {
            auto curve = plateau_curve(spec, sim_grid);
            std::ofstream(outdir / "plateau.csv") << curve.to_csv();
            std::cout << "kl_floor " << curve.kl_floor << "\n";
            for (size_t i = 0; i < curve.sample_sizes.size(); ++i)
                std::cout << "N=" << curve.sample_sizes[i] << " total_error "
                          << curve.mean_total_error[i] << "\n";
        }
        auto report = run_simulation(spec);
        std::ofstream(outdir / "sim.csv") << report.to_csv();
        std::ofstream(outdir / "summary.txt") << report.summary();
        echo_config(outdir, nlohmann::json{{"subcommand", "simulate"}, {"spec", sim_spec_path}});
        std::cout << report.summary();
        return 0;
    }

    if (*cmd_report) {
        std::ifstream in(rp_metrics);
        if (!in) throw Error("cannot open metrics file: " + rp_metrics);
        std::string line;
        if (!std::getline(in, line)) throw Error("empty metrics file");
        std::vector<ReportRow> rows;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto cells = split(line, ',');
            if (cells.size() < 10) throw Error("bad metrics row: " + line);
            ReportRow row;
            row.condition = cells[0];
            row.stats.run_count = static_cast<size_t>(std::stoul(cells[1]));
            row.stats.mu_acc = std::stod(cells[2]);
            row.stats.sigma_acc = std::stod(cells[3]);
            row.stats.mu_f1 = std::stod(cells[4]);
            row.stats.sigma_f1 = std::stod(cells[5]);
            row.stats.alpha_k = std::stod(cells[6]);
            row.stats.p_uc = std::stod(cells[7]);
            row.llm_inferences = static_cast<size_t>(std::stoul(cells[8]));
            row.gold_annotations = static_cast<size_t>(std::stoul(cells[9]));
            if (cells.size() > 10 && !cells[10].empty())
                row.effective_inference_fraction = std::stod(cells[10]);
            rows.push_back(row);
        }
        fs::create_directories(outdir);
        std::string table = render_table(rows, rp_cost);
        std::ofstream(outdir / "report.txt") << table;
        std::cout << table;
        return 0;
    }

    if (*cmd_mock) {
        MockLlmServer server;
        server.load_script(mk_script);
        std::cerr << "[mock] serving " << mk_script << " on " << mk_host << ":" << mk_port << "\n";
        server.serve(mk_host, mk_port);  // blocks
        return 0;
    }

    return 2;  // unreachable: require_subcommand
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << nlohmann::json{{"type", "config"}, {"message", e.what()}}.dump()
                  << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << nlohmann::json{{"type", "runtime"}, {"message", e.what()}}.dump()
                  << "\n";
        return 1;
    }
}
