#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "labelkit/theory_sim.hpp"
#include "oracles.hpp"

using namespace labelkit;

TEST_CASE("kl of identical distributions is zero", "[theory_sim]") {
    std::vector<double> p{0.2, 0.5, 0.3};
    REQUIRE(kl_categorical(p, p) == 0.0);
}

TEST_CASE("kl of a point mass against uniform is ln 2", "[theory_sim]") {
    REQUIRE(kl_categorical(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}) ==
            Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("kl rejects zero mass in q where p is positive", "[theory_sim]") {
    REQUIRE_THROWS_AS(
        kl_categorical(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}), Error);
    REQUIRE_THROWS_AS(kl_categorical(std::vector<double>{0.5}, std::vector<double>{0.5, 0.5}),
                      Error);
}

TEST_CASE("kl is nonnegative over random simplex pairs", "[theory_sim]") {
    Rng rng(606);
    for (int trial = 0; trial < 100000; ++trial) {
        const size_t k = 2 + rng.below(4);
        auto p = oracles::random_simplex(rng, k);
        auto q = oracles::random_simplex(rng, k);
        REQUIRE(kl_categorical(p, q) >= -1e-15);
    }
}

namespace {

SimSpec basic_spec(size_t m, size_t k, double target_kl, uint64_t seed) {
    auto spec = oracles::make_divergent_spec(m, k, target_kl, seed);
    spec.sample_size = 100000;
    spec.replications = 50;
    spec.lambda = 0.5;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("constructed tables hit the requested approximation error", "[theory_sim]") {
    auto spec = basic_spec(20, 3, 0.05, 12);
    REQUIRE(spec.context_weights.size() == 20);
    spec.validate();  // rows stochastic to 1e-12
    double kl = 0;
    for (size_t i = 0; i < spec.num_contexts; ++i)
        kl += spec.context_weights[i] * kl_categorical(spec.p_table[i], spec.ps_table[i]);
    REQUIRE(kl == Catch::Approx(0.05).margin(1e-9));
}

TEST_CASE("matching tables give zero floor and vanishing error", "[theory_sim]") {
    auto spec = basic_spec(20, 3, 0.0, 4);
    spec.replications = 20;
    auto report = run_simulation(spec);
    REQUIRE(report.kl_approx == 0.0);
    REQUIRE(report.kl_floor == 0.0);
    REQUIRE(report.mean_total_error < 0.01);
    REQUIRE(report.mean_total_error >= 0.0);
}

TEST_CASE("measured total error straddles the constructed 0.05 floor", "[theory_sim]") {
    auto report = run_simulation(basic_spec(20, 3, 0.05, 21));
    REQUIRE(report.mean_total_error >= 0.04);
    REQUIRE(report.mean_total_error <= 0.06);
    REQUIRE(report.per_replication_total.size() == 50);
}

TEST_CASE("full filtering removes the approximation error", "[theory_sim]") {
    auto spec = basic_spec(10, 3, 0.08, 33);
    spec.filter_fraction = 1.0;
    spec.replications = 20;
    auto report = run_simulation(spec);
    REQUIRE(report.kl_approx > 0.07);  // unfiltered divergence still reported
    REQUIRE(report.kl_floor == 0.0);
    REQUIRE(report.mean_total_error < 0.01);
}

TEST_CASE("residual identity holds for unfiltered specs", "[theory_sim]") {
    auto spec = basic_spec(8, 3, 0.03, 7);
    spec.replications = 10;
    auto report = run_simulation(spec);
    REQUIRE(report.kl_floor == report.kl_approx);
    REQUIRE(report.decomposition_residual ==
            std::abs(report.mean_total_error -
                     (report.kl_approx + report.mean_estimation_error)));
    // With N large and smoothing mild the residual is small relative to total.
    REQUIRE(report.decomposition_residual < 0.5 * report.mean_total_error);
}

TEST_CASE("plateau curve is non-increasing and converges to the floor", "[theory_sim]") {
    auto spec = basic_spec(20, 3, 0.05, 42);
    spec.replications = 50;
    const std::vector<size_t> grid{100, 1000, 10000, 100000};
    auto curve = plateau_curve(spec, grid);
    REQUIRE(curve.sample_sizes == grid);
    REQUIRE(curve.monotone_nonincreasing);
    REQUIRE(std::abs(curve.mean_total_error.back() - 0.05) <= 0.2 * 0.05);
    for (size_t i = 0; i + 1 < grid.size(); ++i)
        REQUIRE(curve.mean_total_error[i] >= curve.mean_total_error.back());
}

TEST_CASE("plateau curve with zero divergence decays toward zero", "[theory_sim]") {
    auto spec = basic_spec(10, 3, 0.0, 5);
    spec.replications = 20;
    auto curve = plateau_curve(spec, std::vector<size_t>{100, 1000, 10000});
    REQUIRE(curve.mean_total_error.back() < 0.02);
    REQUIRE(curve.mean_total_error.front() > curve.mean_total_error.back());
}

TEST_CASE("estimation error vanishes along the grid", "[theory_sim]") {
    auto spec = basic_spec(10, 3, 0.05, 9);
    spec.replications = 30;
    auto curve = plateau_curve(spec, std::vector<size_t>{100, 1000, 10000, 100000});
    REQUIRE(curve.mean_estimation_error.back() < 0.005);
    REQUIRE(curve.mean_estimation_error.front() > curve.mean_estimation_error.back());
}

TEST_CASE("the floor never rises as the filter fraction grows", "[theory_sim]") {
    Rng rng(1001);
    for (int trial = 0; trial < 20; ++trial) {
        auto spec = basic_spec(5 + rng.below(15), 2 + rng.below(3), 0.02 + 0.1 * rng.real(),
                               1000 + static_cast<uint64_t>(trial));
        spec.replications = 1;
        double previous = 1e18;
        for (double fraction : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            spec.filter_fraction = fraction;
            auto report = run_simulation(spec);
            REQUIRE(report.kl_floor <= previous + 1e-12);
            previous = report.kl_floor;
        }
        REQUIRE(previous == 0.0);  // full filtering zeroes the floor
    }
}

TEST_CASE("half filtering halves a uniform-divergence floor", "[theory_sim]") {
    // Every context contributes the same divergence, so replacing half of
    // them halves the weighted floor.
    auto spec = basic_spec(10, 3, 0.06, 77);
    spec.filter_fraction = 0.5;
    spec.replications = 1;
    auto report = run_simulation(spec);
    REQUIRE(report.kl_floor == Catch::Approx(0.03).margin(1e-6));
}

TEST_CASE("filtered plateau sits at or below the unfiltered curve for large N", "[theory_sim]") {
    auto spec = basic_spec(20, 3, 0.05, 13);
    spec.replications = 30;
    auto unfiltered = plateau_curve(spec, std::vector<size_t>{10000, 100000});
    spec.filter_fraction = 0.5;
    auto filtered = plateau_curve(spec, std::vector<size_t>{10000, 100000});
    for (size_t i = 0; i < 2; ++i)
        REQUIRE(filtered.mean_total_error[i] <= unfiltered.mean_total_error[i] + 0.003);
}

TEST_CASE("zero-weight contexts are excluded from the error aggregation", "[theory_sim]") {
    auto spec = basic_spec(4, 3, 0.05, 3);
    spec.context_weights = {0.5, 0.5, 0.0, 0.0};
    spec.replications = 5;
    spec.sample_size = 20000;
    auto report = run_simulation(spec);  // would throw on KL against unvisited rows otherwise
    REQUIRE(std::isfinite(report.mean_total_error));
}

TEST_CASE("spec validation rejects malformed tables", "[theory_sim]") {
    auto spec = basic_spec(4, 3, 0.02, 8);
    auto bad = spec;
    bad.ps_table[0][0] += 0.1;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.context_weights[0] = -0.1;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.lambda = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sim spec round-trips through json", "[theory_sim]") {
    auto spec = basic_spec(4, 2, 0.03, 6);
    nlohmann::json j{{"num_contexts", spec.num_contexts},
                     {"num_classes", spec.num_classes},
                     {"context_weights", spec.context_weights},
                     {"p_table", spec.p_table},
                     {"ps_table", spec.ps_table},
                     {"sample_size", spec.sample_size},
                     {"replications", spec.replications},
                     {"lambda", spec.lambda},
                     {"filter_fraction", spec.filter_fraction},
                     {"seed", spec.seed}};
    auto parsed = SimSpec::from_json(j);
    REQUIRE(parsed.p_table == spec.p_table);
    REQUIRE(parsed.ps_table == spec.ps_table);
    REQUIRE(parsed.sample_size == spec.sample_size);
    auto a = run_simulation(spec);
    auto b = run_simulation(parsed);
    REQUIRE(a.mean_total_error == b.mean_total_error);  // determinism through serialization
}
