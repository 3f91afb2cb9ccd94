#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelkit/annotator.hpp"
#include "labelkit/classifier.hpp"
#include "labelkit/corpus.hpp"
#include "labelkit/metrics.hpp"
#include "labelkit/mitigation.hpp"
#include "labelkit/theory_sim.hpp"
#include "labelkit/toygen.hpp"

namespace labelkit {

// A label condition: where training labels come from.
struct ConditionSpec {
    enum class Kind { gold, synthetic, entropy_filter, ensemble };
    Kind kind = Kind::gold;
    double alpha = 25;  // entropy_filter
    size_t k = 5;       // ensemble

    std::string name() const {
        switch (kind) {
            case Kind::gold: return "gold";
            case Kind::synthetic: return "synthetic";
            case Kind::entropy_filter: {
                char buf[32];
                if (alpha == std::floor(alpha))
                    std::snprintf(buf, sizeof(buf), "entropy@%.0f", alpha);
                else
                    std::snprintf(buf, sizeof(buf), "entropy@%g", alpha);
                return buf;
            }
            case Kind::ensemble: return "ensemble@" + std::to_string(k);
        }
        return "?";
    }

    static ConditionSpec parse(const std::string& text) {
        ConditionSpec cond;
        std::string t(trim(text));
        if (t == "gold") {
            cond.kind = Kind::gold;
        } else if (t == "synthetic") {
            cond.kind = Kind::synthetic;
        } else if (t.rfind("entropy@", 0) == 0) {
            cond.kind = Kind::entropy_filter;
            cond.alpha = std::stod(t.substr(8));
        } else if (t.rfind("ensemble@", 0) == 0) {
            cond.kind = Kind::ensemble;
            auto k = parse_int(t.substr(9));
            if (!k || *k < 2) throw ConfigError("bad ensemble condition: " + text);
            cond.k = static_cast<size_t>(*k);
        } else {
            throw ConfigError("unknown condition: " + text +
                              " (expected gold | synthetic | entropy@A | ensemble@K)");
        }
        return cond;
    }
};

struct ExperimentPlan {
    // Data source: a generated toy corpus or corpus files.
    std::optional<ToySpec> toy;
    std::string train_path;
    std::string test_path;  // optional; when empty the test split is carved from train_path
    std::vector<std::string> label_names;

    size_t train_cap = 5000;
    size_t test_cap = 2000;
    double validation_fraction = 0.1;
    size_t demo_pool_size = 12;  // gold examples reserved for few-shot demonstrations

    std::vector<ConditionSpec> conditions;
    size_t runs = 5;
    TrainConfig train_config;
    std::vector<size_t> n_grid;
    std::string output_dir = "out";
    uint64_t master_seed = 1;

    // Annotator source for synthetic conditions: hermetic noise model or a
    // live endpoint with a prompt task.
    std::optional<NoiseModel> noise;
    std::optional<EndpointConfig> endpoint;
    std::string cache_path;
    std::string prompt_task;
    size_t num_demonstrations = 3;
    bool reannotate_per_run = false;

    size_t total_pool_size = 0;  // denominator for the effective inference fraction
    double plateau_slope_threshold = 0.005;  // accuracy per ln(N) unit

    void validate() const {
        if (conditions.empty()) throw ConfigError("plan: conditions must be non-empty");
        if (runs < 2) throw ConfigError("plan: need at least 2 runs for stability metrics");
        if (!toy && train_path.empty()) throw ConfigError("plan: no data source");
        bool needs_annotator = false;
        for (const auto& c : conditions)
            if (c.kind != ConditionSpec::Kind::gold) needs_annotator = true;
        if (needs_annotator && !noise && !endpoint && cache_path.empty())
            throw ConfigError("plan: synthetic conditions need a noise model, endpoint, or cache");
        train_config.validate();
    }

    static ExperimentPlan from_json(const nlohmann::json& j);
    static ExperimentPlan from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

struct PlanData {
    Corpus demos;  // gold examples for few-shot prompts (endpoint runs)
    Corpus train;
    Corpus validation;
    Corpus test;
};

// Deterministic data preparation: a demonstration slice is carved first, the
// remainder goes through cap_and_split. With a separate test file the test
// split is subsampled from it instead.
inline PlanData prepare_data(const ExperimentPlan& plan) {
    Corpus full = plan.toy ? generate_toy_corpus(*plan.toy)
                           : load_corpus(plan.train_path, LabelSpace(plan.label_names));
    const size_t demo_take = std::min(plan.demo_pool_size, full.size() > 3 ? full.size() - 3 : 0);

    std::vector<size_t> order(full.size());
    for (size_t i = 0; i < full.size(); ++i) order[i] = i;
    Rng rng(mix_seed(plan.master_seed, 0xDA7Au));
    rng.shuffle(order);

    std::vector<size_t> demo_idx(order.begin(), order.begin() + static_cast<long>(demo_take));
    std::vector<size_t> rest_idx(order.begin() + static_cast<long>(demo_take), order.end());
    Corpus demos = full.subset(demo_idx, "demos");
    Corpus rest = full.subset(rest_idx, "pool");

    PlanData data;
    data.demos = std::move(demos);
    if (!plan.test_path.empty()) {
        // Test comes from its own file; split rest into train/validation only.
        const size_t n_trainval = std::min(plan.train_cap, rest.size());
        if (n_trainval < 2) throw ConfigError("plan: too few examples for train/validation");
        size_t n_val = static_cast<size_t>(
            std::llround(plan.validation_fraction * static_cast<double>(n_trainval)));
        n_val = std::clamp<size_t>(n_val, 1, n_trainval - 1);
        std::vector<size_t> tv_order(rest.size());
        for (size_t i = 0; i < rest.size(); ++i) tv_order[i] = i;
        Rng tv_rng(mix_seed(plan.master_seed, 0x5711u));
        tv_rng.shuffle(tv_order);
        data.train = rest.subset({tv_order.begin(), tv_order.begin() + static_cast<long>(n_trainval - n_val)},
                                 "train");
        data.validation = rest.subset({tv_order.begin() + static_cast<long>(n_trainval - n_val),
                                       tv_order.begin() + static_cast<long>(n_trainval)},
                                      "validation");
        Corpus test_full = load_corpus(plan.test_path, LabelSpace(plan.label_names), "test");
        if (test_full.size() > plan.test_cap) {
            std::vector<size_t> torder(test_full.size());
            for (size_t i = 0; i < test_full.size(); ++i) torder[i] = i;
            Rng trng(mix_seed(plan.master_seed, 0x7E57u));
            trng.shuffle(torder);
            torder.resize(plan.test_cap);
            data.test = test_full.subset(torder, "test");
        } else {
            data.test = std::move(test_full);
        }
    } else {
        auto splits = cap_and_split(rest, plan.train_cap, plan.test_cap, plan.validation_fraction,
                                    mix_seed(plan.master_seed, 0x5711u));
        data.train = std::move(splits.train);
        data.validation = std::move(splits.validation);
        data.test = std::move(splits.test);
    }
    return data;
}

namespace detail {

inline Corpus concat_pool(const Corpus& train, const Corpus& validation) {
    std::vector<Example> examples;
    examples.reserve(train.size() + validation.size());
    for (const auto& ex : train.examples()) examples.push_back(ex);
    for (const auto& ex : validation.examples()) examples.push_back(ex);
    return Corpus(train.label_space(), std::move(examples), "pool");
}

inline Corpus with_labels(const Corpus& corpus, std::span<const int> labels, size_t offset) {
    std::vector<Example> examples;
    examples.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        Example ex = corpus.at(i);
        ex.gold_label = labels[offset + i];
        examples.push_back(std::move(ex));
    }
    return Corpus(corpus.label_space(), std::move(examples), corpus.split());
}

// Annotation passes for the pool, from whichever source the plan configures.
inline std::vector<AnnotationRecord> annotate_pool(const ExperimentPlan& plan,
                                                   const PlanData& data, const Corpus& pool,
                                                   size_t k_passes, uint64_t demo_seed_base) {
    if (plan.noise) {
        return k_passes == 1 ? noise_annotate(pool, *plan.noise, demo_seed_base)
                             : noise_ensemble_annotate(pool, *plan.noise, demo_seed_base, k_passes);
    }
    if (!plan.endpoint) throw ConfigError("plan: no annotator configured");
    PromptSpec spec;
    spec.task_description = plan.prompt_task.empty() ? "Classify the text." : plan.prompt_task;
    spec.label_space = pool.label_space();
    spec.num_demonstrations = plan.num_demonstrations;
    spec.demonstration_pool = data.demos;
    spec.demo_seed = demo_seed_base;
    AnnotationCache cache =
        plan.cache_path.empty() ? AnnotationCache{} : AnnotationCache::open(plan.cache_path);
    AnnotateOptions options;
    options.progress = &std::cerr;
    if (k_passes == 1) return annotate_corpus(pool, spec, *plan.endpoint, cache, options).records;
    return ensemble_annotate(pool, spec, *plan.endpoint, cache, k_passes, options).records;
}

}  // namespace detail

struct ResolvedLabels {
    std::vector<int> labels;  // pool order: train examples then validation examples
    CostLedger cost;
    std::optional<PatchedLabels> patched;
    std::vector<AnnotationRecord> records;  // empty for gold
};

// Training labels for one condition over the annotation pool. Invalid records
// that survive filtering are replaced with gold and charged to the ledger.
inline ResolvedLabels resolve_condition_labels(const ExperimentPlan& plan, const PlanData& data,
                                               const Corpus& pool, const ConditionSpec& cond,
                                               uint64_t demo_seed_base) {
    ResolvedLabels out;
    const size_t n = pool.size();
    if (cond.kind == ConditionSpec::Kind::gold) {
        for (size_t i = 0; i < n; ++i) {
            const auto& ex = pool.at(i);
            if (!ex.gold_label) throw Error("gold condition: example " + ex.id + " has no label");
            out.labels.push_back(*ex.gold_label);
        }
        out.cost.gold_annotations = n;
        return out;
    }

    const size_t passes = cond.kind == ConditionSpec::Kind::ensemble ? cond.k : 1;
    out.records = detail::annotate_pool(plan, data, pool, passes, demo_seed_base);

    if (cond.kind == ConditionSpec::Kind::synthetic) {
        out.labels.resize(n);
        out.cost.llm_inferences = n;
        for (size_t i = 0; i < n; ++i) {
            const auto& rec = out.records[i];
            if (rec.invalid) {
                out.labels[i] = detail::gold_label_or_throw(pool, rec.example_id, "synthetic");
                ++out.cost.gold_annotations;
            } else {
                out.labels[i] = rec.predicted_label;
            }
        }
        return out;
    }

    PatchedLabels patched = cond.kind == ConditionSpec::Kind::entropy_filter
                                ? entropy_rank_filter(out.records, pool, cond.alpha)
                                : consistency_resolve(out.records, pool);
    for (size_t i = 0; i < n; ++i) {
        if (out.records[i].invalid && patched.source[i] == LabelSource::synthetic) {
            patched.labels[i] =
                detail::gold_label_or_throw(pool, out.records[i].example_id, "invalid fallback");
            patched.source[i] = LabelSource::gold_replaced;
            ++patched.replacement_count;
            ++patched.cost.gold_annotations;
        }
    }
    out.labels = patched.labels;
    out.cost = patched.cost;
    out.patched = std::move(patched);
    return out;
}

struct ConditionOutcome {
    ConditionSpec cond;
    std::vector<RunResult> runs;
    StabilityReport stats;
    CostLedger cost;
    double effective_inference_fraction = -1;
};

struct ExperimentReport {
    std::vector<ConditionOutcome> outcomes;
    std::vector<int> test_gold;
    std::string table_text;
    std::string csv_text;
};

// Shared engine for the baseline and mitigation designs: per condition,
// resolve pool labels once (or per run when re-annotation is on), train R
// runs with seeds master+1..master+R, evaluate every run on the identical
// test split, and aggregate stability metrics.
inline ExperimentReport run_conditions(const ExperimentPlan& plan, bool with_cost_columns) {
    plan.validate();
    PlanData data = prepare_data(plan);
    Corpus pool = detail::concat_pool(data.train, data.validation);

    ExperimentReport report;
    for (const auto& ex : data.test.examples()) {
        if (!ex.gold_label) throw Error("test example " + ex.id + " has no gold label");
        report.test_gold.push_back(*ex.gold_label);
    }
    const auto num_classes = static_cast<int>(pool.num_classes());

    std::vector<ReportRow> rows;
    for (const auto& cond : plan.conditions) {
        ConditionOutcome outcome;
        outcome.cond = cond;
        const uint64_t demo_base = mix_seed(plan.master_seed, 0xA110u);

        ResolvedLabels resolved;
        if (!plan.reannotate_per_run)
            resolved = resolve_condition_labels(plan, data, pool, cond, demo_base);

        for (size_t r = 0; r < plan.runs; ++r) {
            if (plan.reannotate_per_run) {
                resolved = resolve_condition_labels(plan, data, pool, cond,
                                                    mix_seed(demo_base, r + 1));
                outcome.cost.llm_inferences += resolved.cost.llm_inferences;
                outcome.cost.gold_annotations += resolved.cost.gold_annotations;
            }
            TrainConfig cfg = plan.train_config;
            cfg.seed = plan.master_seed + 1 + r;
            Corpus train_c = detail::with_labels(data.train, resolved.labels, 0);
            Corpus val_c = detail::with_labels(data.validation, resolved.labels, data.train.size());
            auto trained = train(train_c, val_c, cfg);
            auto pred = predict(trained.model, data.test);
            RunResult run;
            run.run_id = static_cast<int>(r);
            run.seed = cfg.seed;
            run.predictions = std::move(pred.labels);
            std::tie(run.accuracy, run.macro_f1) =
                accuracy_and_macro_f1(run.predictions, report.test_gold, num_classes);
            outcome.runs.push_back(std::move(run));
        }
        if (!plan.reannotate_per_run) outcome.cost = resolved.cost;
        outcome.stats = aggregate(outcome.runs, report.test_gold, num_classes);
        const double denom = static_cast<double>(
            plan.total_pool_size > 0 ? plan.total_pool_size : pool.size());
        if (cond.kind != ConditionSpec::Kind::gold)
            outcome.effective_inference_fraction =
                static_cast<double>(outcome.cost.llm_inferences) / denom;

        // Audit sidecar for filtered conditions.
        if (resolved.patched && !plan.output_dir.empty()) {
            std::filesystem::create_directories(plan.output_dir);
            save_patched_labels(*resolved.patched, pool, resolved.records,
                                std::filesystem::path(plan.output_dir) /
                                    ("labels_" + cond.name() + ".jsonl"),
                                std::filesystem::path(plan.output_dir) /
                                    ("audit_" + cond.name() + ".jsonl"));
        }

        ReportRow row;
        row.condition = cond.name();
        row.stats = outcome.stats;
        row.llm_inferences = outcome.cost.llm_inferences;
        row.gold_annotations = outcome.cost.gold_annotations;
        row.effective_inference_fraction = outcome.effective_inference_fraction;
        rows.push_back(row);
        report.outcomes.push_back(std::move(outcome));
    }
    report.table_text = render_table(rows, with_cost_columns);
    report.csv_text = render_csv(rows);

    if (!plan.output_dir.empty()) {
        std::filesystem::create_directories(plan.output_dir);
        std::ofstream(std::filesystem::path(plan.output_dir) / "report.txt") << report.table_text;
        std::ofstream(std::filesystem::path(plan.output_dir) / "metrics.csv") << report.csv_text;
        std::ofstream(std::filesystem::path(plan.output_dir) / "config_echo.json")
            << plan.to_json().dump(2) << "\n";
    }
    return report;
}

inline ExperimentReport run_baseline(const ExperimentPlan& plan) {
    return run_conditions(plan, false);
}

inline ExperimentReport run_mitigation(const ExperimentPlan& plan) {
    bool has_filter = false;
    for (const auto& c : plan.conditions)
        if (c.kind == ConditionSpec::Kind::entropy_filter ||
            c.kind == ConditionSpec::Kind::ensemble)
            has_filter = true;
    if (!has_filter)
        throw ConfigError("mitigation plan needs an entropy@A or ensemble@K condition");
    return run_conditions(plan, true);
}

// Shuffled index order backing the curve study's nested subsampling: the
// N-example subset is always the first N entries, so smaller training sets
// are subsets of larger ones.
inline std::vector<size_t> nested_subsample_order(size_t n, uint64_t master_seed) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(master_seed, 0xC3u));
    rng.shuffle(order);
    return order;
}

struct CurvePoint {
    size_t n = 0;
    double mu_acc = 0, sigma_acc = 0;
    double mu_f1 = 0, sigma_f1 = 0;
};

struct CurveCondition {
    std::string condition;
    std::vector<CurvePoint> points;
    double tail_slope = 0;  // least-squares slope of mu_acc against ln N, last 3 points
    bool plateau_flag = false;
};

struct CurveReport {
    std::vector<CurveCondition> conditions;
    std::string csv_text;
};

// Learning-curve study with nested subsampling: the N-example training set is
// a prefix of every larger one. The plateau diagnostic fits mu_acc against
// ln N over the last three grid points and flags slopes below the threshold.
inline CurveReport run_curve(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.n_grid.empty()) throw ConfigError("curve plan: n_grid required");
    for (size_t i = 1; i < plan.n_grid.size(); ++i)
        if (plan.n_grid[i] <= plan.n_grid[i - 1])
            throw ConfigError("curve plan: n_grid must increase");

    PlanData data = prepare_data(plan);
    if (plan.n_grid.back() > data.train.size())
        throw ConfigError("curve plan: n_grid exceeds train size (" +
                          std::to_string(data.train.size()) + ")");
    Corpus pool = detail::concat_pool(data.train, data.validation);
    std::vector<int> test_gold;
    for (const auto& ex : data.test.examples()) test_gold.push_back(*ex.gold_label);
    const auto num_classes = static_cast<int>(pool.num_classes());

    const std::vector<size_t> nest_order = nested_subsample_order(data.train.size(), plan.master_seed);

    CurveReport report;
    std::ostringstream csv;
    csv << "condition,n,mu_acc,sigma_acc,mu_f1,sigma_f1\n" << std::setprecision(12);
    for (const auto& cond : plan.conditions) {
        CurveCondition cc;
        cc.condition = cond.name();
        auto resolved = resolve_condition_labels(plan, data, pool, cond,
                                                 mix_seed(plan.master_seed, 0xA110u));
        Corpus train_full = detail::with_labels(data.train, resolved.labels, 0);
        Corpus val_c = detail::with_labels(data.validation, resolved.labels, data.train.size());

        for (size_t n : plan.n_grid) {
            std::vector<size_t> subset_idx(nest_order.begin(),
                                           nest_order.begin() + static_cast<long>(n));
            Corpus train_n = train_full.subset(subset_idx, "train");
            std::vector<RunResult> runs;
            for (size_t r = 0; r < plan.runs; ++r) {
                TrainConfig cfg = plan.train_config;
                cfg.seed = plan.master_seed + 1 + r;
                auto trained = train(train_n, val_c, cfg);
                auto pred = predict(trained.model, data.test);
                RunResult run;
                run.run_id = static_cast<int>(r);
                run.seed = cfg.seed;
                run.predictions = std::move(pred.labels);
                std::tie(run.accuracy, run.macro_f1) =
                    accuracy_and_macro_f1(run.predictions, test_gold, num_classes);
                runs.push_back(std::move(run));
            }
            auto stats = aggregate(runs, test_gold, num_classes);
            cc.points.push_back({n, stats.mu_acc, stats.sigma_acc, stats.mu_f1, stats.sigma_f1});
            csv << cc.condition << ',' << n << ',' << stats.mu_acc << ',' << stats.sigma_acc << ','
                << stats.mu_f1 << ',' << stats.sigma_f1 << "\n";
        }

        const size_t window = std::min<size_t>(3, cc.points.size());
        if (window >= 2) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (size_t i = cc.points.size() - window; i < cc.points.size(); ++i) {
                const double x = std::log(static_cast<double>(cc.points[i].n));
                const double y = cc.points[i].mu_acc;
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            const double w = static_cast<double>(window);
            cc.tail_slope = (w * sxy - sx * sy) / (w * sxx - sx * sx);
            cc.plateau_flag = cc.tail_slope < plan.plateau_slope_threshold;
        }
        report.conditions.push_back(std::move(cc));
    }
    report.csv_text = csv.str();
    if (!plan.output_dir.empty()) {
        std::filesystem::create_directories(plan.output_dir);
        std::ofstream(std::filesystem::path(plan.output_dir) / "curve.csv") << report.csv_text;
        std::ofstream summary(std::filesystem::path(plan.output_dir) / "curve_summary.txt");
        for (const auto& cc : report.conditions)
            summary << cc.condition << ": tail slope " << cc.tail_slope
                    << (cc.plateau_flag ? " [plateau]" : "") << "\n";
        std::ofstream(std::filesystem::path(plan.output_dir) / "config_echo.json")
            << plan.to_json().dump(2) << "\n";
    }
    return report;
}

// ---------------------------------------------------------------------------
// Plan (de)serialization
// ---------------------------------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"eval_batch_size", cfg.eval_batch_size},
                          {"learning_rate", cfg.learning_rate},
                          {"weight_decay", cfg.weight_decay},
                          {"warmup_ratio", cfg.warmup_ratio},
                          {"hidden_dim", cfg.hidden_dim},
                          {"hash_dim", cfg.hash_dim},
                          {"ngram_orders", cfg.ngram_orders},
                          {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.eval_batch_size = j.value("eval_batch_size", cfg.eval_batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.hash_dim = j.value("hash_dim", cfg.hash_dim);
    if (j.contains("ngram_orders")) cfg.ngram_orders = j["ngram_orders"].get<std::vector<int>>();
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline ExperimentPlan ExperimentPlan::from_json(const nlohmann::json& j) try {
    ExperimentPlan plan;
    if (j.contains("toy")) plan.toy = ToySpec::from_json(j["toy"]);
    plan.train_path = j.value("train_path", std::string{});
    plan.test_path = j.value("test_path", std::string{});
    if (j.contains("label_names"))
        plan.label_names = j["label_names"].get<std::vector<std::string>>();
    plan.train_cap = j.value("train_cap", plan.train_cap);
    plan.test_cap = j.value("test_cap", plan.test_cap);
    plan.validation_fraction = j.value("validation_fraction", plan.validation_fraction);
    plan.demo_pool_size = j.value("demo_pool_size", plan.demo_pool_size);
    for (const auto& c : j.value("conditions", std::vector<std::string>{}))
        plan.conditions.push_back(ConditionSpec::parse(c));
    plan.runs = j.value("runs", plan.runs);
    if (j.contains("train_config")) plan.train_config = train_config_from_json(j["train_config"]);
    if (j.contains("n_grid")) plan.n_grid = j["n_grid"].get<std::vector<size_t>>();
    plan.output_dir = j.value("output_dir", plan.output_dir);
    plan.master_seed = j.value("master_seed", plan.master_seed);
    if (j.contains("noise")) plan.noise = NoiseModel::from_json(j["noise"]);
    if (j.contains("endpoint")) {
        EndpointConfig ep;
        const auto& e = j["endpoint"];
        ep.base_url = e.value("base_url", ep.base_url);
        ep.model = e.value("model", ep.model);
        ep.api_key_env = e.value("api_key_env", ep.api_key_env);
        ep.timeout_s = e.value("timeout_s", ep.timeout_s);
        ep.max_in_flight = e.value("max_in_flight", ep.max_in_flight);
        ep.max_retries = e.value("max_retries", ep.max_retries);
        ep.retry_base_ms = e.value("retry_base_ms", ep.retry_base_ms);
        ep.max_completion_tokens = e.value("max_completion_tokens", ep.max_completion_tokens);
        ep.top_logprobs = e.value("top_logprobs", ep.top_logprobs);
        plan.endpoint = ep;
    }
    plan.cache_path = j.value("cache_path", std::string{});
    plan.prompt_task = j.value("prompt_task", std::string{});
    plan.num_demonstrations = j.value("num_demonstrations", plan.num_demonstrations);
    plan.reannotate_per_run = j.value("reannotate_per_run", false);
    plan.total_pool_size = j.value("total_pool_size", size_t{0});
    plan.plateau_slope_threshold = j.value("plateau_slope_threshold", 0.005);
    return plan;
} catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment plan: ") + e.what());
}

inline nlohmann::json ExperimentPlan::to_json() const {
    nlohmann::json j;
    if (toy) {
        j["toy"] = {{"num_classes", toy->num_classes},     {"class_priors", toy->class_priors},
                    {"vocab_per_class", toy->vocab_per_class}, {"shared_vocab", toy->shared_vocab},
                    {"overlap", toy->overlap},             {"tokens_per_text", toy->tokens_per_text},
                    {"size", toy->size},                   {"seed", toy->seed}};
    }
    if (!train_path.empty()) j["train_path"] = train_path;
    if (!test_path.empty()) j["test_path"] = test_path;
    if (!label_names.empty()) j["label_names"] = label_names;
    j["train_cap"] = train_cap;
    j["test_cap"] = test_cap;
    j["validation_fraction"] = validation_fraction;
    j["demo_pool_size"] = demo_pool_size;
    std::vector<std::string> cond_names;
    for (const auto& c : conditions) cond_names.push_back(c.name());
    j["conditions"] = cond_names;
    j["runs"] = runs;
    j["train_config"] = train_config_to_json(train_config);
    if (!n_grid.empty()) j["n_grid"] = n_grid;
    j["output_dir"] = output_dir;
    j["master_seed"] = master_seed;
    if (noise) {
        j["noise"] = {{"confusion", noise->confusion},
                      {"trigger_tokens", noise->trigger_tokens},
                      {"trigger_target", noise->trigger_target},
                      {"trigger_peak", noise->trigger_peak},
                      {"probs_sharpening", noise->probs_sharpening},
                      {"seed", noise->seed}};
    }
    if (endpoint) {
        j["endpoint"] = {{"base_url", endpoint->base_url},
                         {"model", endpoint->model},
                         {"api_key_env", endpoint->api_key_env},
                         {"timeout_s", endpoint->timeout_s},
                         {"max_in_flight", endpoint->max_in_flight},
                         {"max_retries", endpoint->max_retries},
                         {"retry_base_ms", endpoint->retry_base_ms},
                         {"max_completion_tokens", endpoint->max_completion_tokens},
                         {"top_logprobs", endpoint->top_logprobs}};
    }
    if (!cache_path.empty()) j["cache_path"] = cache_path;
    if (!prompt_task.empty()) j["prompt_task"] = prompt_task;
    j["num_demonstrations"] = num_demonstrations;
    j["reannotate_per_run"] = reannotate_per_run;
    if (total_pool_size > 0) j["total_pool_size"] = total_pool_size;
    j["plateau_slope_threshold"] = plateau_slope_threshold;
    return j;
}

inline ExperimentPlan ExperimentPlan::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open plan file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": bad plan: " + e.what());
    }
    return from_json(j);
}

}  // namespace labelkit
