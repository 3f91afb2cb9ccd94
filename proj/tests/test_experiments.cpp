#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "labelkit/experiments.hpp"

using namespace labelkit;
namespace fs = std::filesystem;

namespace {

ToySpec tiny_toy(uint64_t seed = 1) {
    ToySpec spec;
    spec.size = 400;
    spec.seed = seed;
    return spec;
}

NoiseModel minority_noise() {
    NoiseModel noise;
    noise.confusion = {{0.95, 0.03, 0.02}, {0.06, 0.90, 0.04}, {0.50, 0.15, 0.35}};
    noise.seed = 9;
    return noise;
}

ExperimentPlan tiny_plan(const std::string& outdir) {
    ExperimentPlan plan;
    plan.toy = tiny_toy();
    plan.conditions = {ConditionSpec::parse("gold"), ConditionSpec::parse("synthetic")};
    plan.runs = 2;
    plan.train_cap = 200;
    plan.test_cap = 120;
    plan.validation_fraction = 0.15;
    plan.train_config.epochs = 5;
    plan.train_config.hidden_dim = 16;
    plan.train_config.hash_dim = 1u << 10;
    plan.train_config.learning_rate = 0.5;
    plan.noise = minority_noise();
    plan.output_dir = outdir;
    plan.master_seed = 3;
    return plan;
}

std::string fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("labelkit_exp_" + name);
    fs::remove_all(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("condition specs parse and print round-trip", "[experiments]") {
    REQUIRE(ConditionSpec::parse("gold").kind == ConditionSpec::Kind::gold);
    REQUIRE(ConditionSpec::parse("synthetic").name() == "synthetic");
    auto entropy = ConditionSpec::parse("entropy@25");
    REQUIRE(entropy.kind == ConditionSpec::Kind::entropy_filter);
    REQUIRE(entropy.alpha == 25.0);
    REQUIRE(entropy.name() == "entropy@25");
    auto ensemble = ConditionSpec::parse("ensemble@5");
    REQUIRE(ensemble.k == 5);
    REQUIRE(ensemble.name() == "ensemble@5");
    REQUIRE_THROWS_AS(ConditionSpec::parse("bogus"), ConfigError);
    REQUIRE_THROWS_AS(ConditionSpec::parse("ensemble@1"), ConfigError);
}

TEST_CASE("toy corpus generation is deterministic with unique ids", "[experiments]") {
    auto a = generate_toy_corpus(tiny_toy(5));
    auto b = generate_toy_corpus(tiny_toy(5));
    REQUIRE(a.size() == 400);
    std::set<std::string> ids;
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.at(i).text == b.at(i).text);
        REQUIRE(a.at(i).gold_label == b.at(i).gold_label);
        ids.insert(a.at(i).id);
    }
    REQUIRE(ids.size() == 400);
    auto c = generate_toy_corpus(tiny_toy(6));
    bool any_diff = false;
    for (size_t i = 0; i < c.size(); ++i) any_diff |= c.at(i).text != a.at(i).text;
    REQUIRE(any_diff);
}

TEST_CASE("toy priors put the minority class last", "[experiments]") {
    ToySpec spec = tiny_toy();
    spec.size = 5000;
    auto stats = class_stats(generate_toy_corpus(spec));
    REQUIRE(stats.counts[2] < stats.counts[0]);
    REQUIRE(stats.counts[2] < stats.counts[1]);
    REQUIRE(stats.imbalance_ratio > 2.0);
}

TEST_CASE("noise annotation keeps the argmax contract and is seed-stable", "[experiments]") {
    auto corpus = generate_toy_corpus(tiny_toy(2));
    auto noise = minority_noise();
    auto a = noise_annotate(corpus, noise, 1);
    auto b = noise_annotate(corpus, noise, 1);
    auto c = noise_annotate(corpus, noise, 2);
    REQUIRE(a.size() == corpus.size());
    size_t diffs = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].predicted_label == argmax_lowest_id(a[i].class_probs));
        REQUIRE(a[i].predicted_label == b[i].predicted_label);
        REQUIRE(std::abs(a[i].entropy - entropy(a[i].class_probs)) < 1e-12);
        if (a[i].predicted_label != c[i].predicted_label) ++diffs;
    }
    REQUIRE(diffs > 0);  // demonstration seed matters
}

TEST_CASE("trigger tokens force a systematic label across seeds", "[experiments]") {
    Corpus corpus(LabelSpace({"a", "b", "c"}),
                  {{"t0", "sw1 plain words", 2}, {"t1", "nothing special", 2}});
    NoiseModel noise = minority_noise();
    noise.trigger_tokens = {"sw1"};
    noise.trigger_target = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto records = noise_annotate(corpus, noise, seed);
        REQUIRE(records[0].predicted_label == 0);
        REQUIRE(records[0].entropy < 0.3);  // confidently wrong
    }
}

TEST_CASE("noise confusion hits the expected error rate on the minority class", "[experiments]") {
    ToySpec spec = tiny_toy(8);
    spec.size = 6000;
    auto corpus = generate_toy_corpus(spec);
    auto records = noise_annotate(corpus, minority_noise(), 4);
    size_t minority_total = 0, minority_correct = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (*corpus.at(i).gold_label != 2) continue;
        ++minority_total;
        if (records[i].predicted_label == 2) ++minority_correct;
    }
    const double rate = static_cast<double>(minority_correct) / static_cast<double>(minority_total);
    REQUIRE(rate == Catch::Approx(0.35).margin(0.05));
}

TEST_CASE("prepare_data yields disjoint deterministic splits", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("prep"));
    auto a = prepare_data(plan);
    auto b = prepare_data(plan);
    REQUIRE(a.train.size() + a.validation.size() == 200);
    REQUIRE(a.test.size() <= 120);
    REQUIRE(a.demos.size() == plan.demo_pool_size);
    std::set<std::string> ids;
    size_t total = 0;
    for (const Corpus* c : {&a.demos, &a.train, &a.validation, &a.test}) {
        for (const auto& ex : c->examples()) ids.insert(ex.id);
        total += c->size();
    }
    REQUIRE(ids.size() == total);
    for (size_t i = 0; i < a.test.size(); ++i) REQUIRE(a.test.at(i).id == b.test.at(i).id);
}

TEST_CASE("baseline runs produce aligned reproducible reports", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("base1"));
    auto report = run_baseline(plan);
    REQUIRE(report.outcomes.size() == 2);
    for (const auto& outcome : report.outcomes) {
        REQUIRE(outcome.runs.size() == 2);
        for (const auto& run : outcome.runs)
            REQUIRE(run.predictions.size() == report.test_gold.size());
    }
    REQUIRE(report.outcomes[0].cond.name() == "gold");
    REQUIRE(report.outcomes[0].cost.gold_annotations == 200);
    REQUIRE(report.outcomes[1].cost.llm_inferences == 200);

    plan.output_dir = fresh_dir("base2");
    auto again = run_baseline(plan);
    REQUIRE(again.csv_text == report.csv_text);  // full-plan determinism

    REQUIRE(fs::exists(fs::path(plan.output_dir) / "report.txt"));
    REQUIRE(fs::exists(fs::path(plan.output_dir) / "metrics.csv"));
    REQUIRE(fs::exists(fs::path(plan.output_dir) / "config_echo.json"));
}

TEST_CASE("gold labels beat the noisy annotator on the toy task", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("order"));
    plan.toy->size = 700;
    plan.train_cap = 500;
    plan.test_cap = 100;
    auto report = run_baseline(plan);
    REQUIRE(report.outcomes[0].stats.mu_acc > report.outcomes[1].stats.mu_acc);
}

TEST_CASE("entropy at one hundred percent reproduces the gold condition", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("e100"));
    plan.conditions = {ConditionSpec::parse("gold"), ConditionSpec::parse("entropy@100")};
    auto report = run_mitigation(plan);
    const auto& gold_runs = report.outcomes[0].runs;
    const auto& filtered_runs = report.outcomes[1].runs;
    for (size_t r = 0; r < gold_runs.size(); ++r)
        REQUIRE(gold_runs[r].predictions == filtered_runs[r].predictions);
    REQUIRE(report.outcomes[1].cost.gold_annotations == 200);
}

TEST_CASE("ensemble ledger records k passes over the pool", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("ledger"));
    plan.conditions = {ConditionSpec::parse("ensemble@5")};
    plan.total_pool_size = 200 * 20;  // the annotated pool is 5% of the total
    auto report = run_mitigation(plan);
    REQUIRE(report.outcomes[0].cost.llm_inferences == 5 * 200);
    REQUIRE(report.outcomes[0].effective_inference_fraction == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("mitigation plans require a filter condition", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("nofilter"));
    REQUIRE_THROWS_AS(run_mitigation(plan), ConfigError);
}

TEST_CASE("nested subsample order makes smaller sets prefixes of larger ones", "[experiments]") {
    auto order = nested_subsample_order(500, 11);
    auto again = nested_subsample_order(500, 11);
    REQUIRE(order == again);
    std::set<size_t> small(order.begin(), order.begin() + 250);
    std::set<size_t> large(order.begin(), order.begin() + 500);
    for (size_t idx : small) REQUIRE(large.count(idx) == 1);
    REQUIRE(small.size() == 250);
    REQUIRE(nested_subsample_order(500, 12) != order);
}

TEST_CASE("curve study reports points per condition and a tail slope", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("curve"));
    plan.conditions = {ConditionSpec::parse("gold")};
    plan.n_grid = {40, 80, 160};
    auto curve = run_curve(plan);
    REQUIRE(curve.conditions.size() == 1);
    REQUIRE(curve.conditions[0].points.size() == 3);
    for (size_t i = 0; i < 3; ++i) REQUIRE(curve.conditions[0].points[i].n == plan.n_grid[i]);
    REQUIRE(std::isfinite(curve.conditions[0].tail_slope));
    REQUIRE(fs::exists(fs::path(plan.output_dir) / "curve.csv"));
    REQUIRE(curve.csv_text.find("gold,40,") != std::string::npos);
}

TEST_CASE("curve grid beyond the train size is rejected", "[experiments]") {
    auto plan = tiny_plan(fresh_dir("curvebad"));
    plan.n_grid = {40, 100000};
    REQUIRE_THROWS_AS(run_curve(plan), ConfigError);
}

TEST_CASE("experiment plans round-trip through json", "[experiments]") {
    auto plan = tiny_plan("out_rt");
    plan.conditions.push_back(ConditionSpec::parse("entropy@25"));
    plan.total_pool_size = 4000;
    auto parsed = ExperimentPlan::from_json(plan.to_json());
    REQUIRE(parsed.conditions.size() == plan.conditions.size());
    REQUIRE(parsed.conditions[2].name() == "entropy@25");
    REQUIRE(parsed.train_cap == plan.train_cap);
    REQUIRE(parsed.master_seed == plan.master_seed);
    REQUIRE(parsed.noise.has_value());
    REQUIRE(parsed.noise->confusion == plan.noise->confusion);
    REQUIRE(parsed.train_config.hash_dim == plan.train_config.hash_dim);
    REQUIRE(parsed.total_pool_size == 4000);
}

TEST_CASE("plans without an annotator reject synthetic conditions", "[experiments]") {
    auto plan = tiny_plan("out_bad");
    plan.noise.reset();
    REQUIRE_THROWS_AS(plan.validate(), ConfigError);
}
