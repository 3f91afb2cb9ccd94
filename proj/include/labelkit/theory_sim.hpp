#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelkit/rng.hpp"
#include "labelkit/util.hpp"

namespace labelkit {

// KL divergence between categorical distributions, in nats, with 0 ln 0 = 0.
inline double kl_categorical(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error("kl_categorical: length mismatch");
    double kl = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0) continue;
        if (q[i] <= 0) throw Error("kl_categorical: q has zero mass where p is positive");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

// Tabular world: M contexts with weights (the text marginal), a true
// conditional table P and a synthetic conditional table PS, both M x K
// row-stochastic. Sampling draws (context, label) pairs from the synthetic
// table, optionally with a seeded filter_fraction of contexts replaced by
// their true rows — the mixture a replacement filter realizes. The estimator
// is add-lambda smoothed conditional counting.
struct SimSpec {
    size_t num_contexts = 0;                     // M
    size_t num_classes = 0;                      // K
    std::vector<double> context_weights;         // size M
    std::vector<std::vector<double>> p_table;    // M x K
    std::vector<std::vector<double>> ps_table;   // M x K
    size_t sample_size = 0;                      // N
    size_t replications = 1;
    double lambda = 0.5;
    double filter_fraction = 0.0;
    uint64_t seed = 1;

    void validate() const {
        if (num_contexts == 0 || num_classes == 0) throw ConfigError("sim: M and K must be positive");
        if (sample_size == 0) throw ConfigError("sim: sample_size must be positive");
        if (replications == 0) throw ConfigError("sim: replications must be positive");
        if (!(lambda > 0)) throw ConfigError("sim: lambda must be positive");
        if (!(filter_fraction >= 0 && filter_fraction <= 1))
            throw ConfigError("sim: filter_fraction must lie in [0,1]");
        if (context_weights.size() != num_contexts) throw ConfigError("sim: weights size != M");
        auto check_table = [&](const std::vector<std::vector<double>>& t, const char* name) {
            if (t.size() != num_contexts) throw ConfigError(std::string("sim: ") + name + " rows != M");
            for (const auto& row : t) {
                if (row.size() != num_classes)
                    throw ConfigError(std::string("sim: ") + name + " cols != K");
                double s = 0;
                for (double v : row) {
                    if (v < 0) throw ConfigError(std::string("sim: ") + name + " has negative entry");
                    s += v;
                }
                if (std::abs(s - 1.0) > 1e-12)
                    throw ConfigError(std::string("sim: ") + name + " row not stochastic");
            }
        };
        check_table(p_table, "p_table");
        check_table(ps_table, "ps_table");
        double ws = 0;
        for (double w : context_weights) {
            if (w < 0) throw ConfigError("sim: negative context weight");
            ws += w;
        }
        if (std::abs(ws - 1.0) > 1e-9) throw ConfigError("sim: context weights must sum to 1");
    }

    static SimSpec from_json(const nlohmann::json& j);
    static SimSpec from_file(const std::filesystem::path& path);

    // Contexts whose synthetic rows are replaced by true rows; nested in
    // filter_fraction for a fixed seed.
    std::vector<size_t> filtered_contexts() const {
        const auto count = static_cast<size_t>(
            std::llround(filter_fraction * static_cast<double>(num_contexts)));
        std::vector<size_t> order(num_contexts);
        for (size_t i = 0; i < num_contexts; ++i) order[i] = i;
        Rng rng(mix_seed(seed, 0xF117u));
        rng.shuffle(order);
        order.resize(count);
        return order;
    }

    // Effective sampling table: true rows at filtered contexts, synthetic
    // rows elsewhere.
    std::vector<std::vector<double>> effective_table() const {
        auto table = ps_table;
        for (size_t i : filtered_contexts()) table[i] = p_table[i];
        return table;
    }
};

struct SimReport {
    double kl_approx = 0;             // KL(P || PS), weighted over contexts
    double kl_floor = 0;              // KL(P || effective table); equals kl_approx when unfiltered
    double mean_total_error = 0;      // E[ KL(P || Phat) ]
    double mean_estimation_error = 0; // E[ KL(effective || Phat) ]
    double decomposition_residual = 0;
    std::vector<double> per_replication_total;
    std::vector<double> per_replication_estimation;

    std::string to_csv() const {
        std::ostringstream os;
        os << "replication,total_error,estimation_error\n" << std::setprecision(12);
        for (size_t i = 0; i < per_replication_total.size(); ++i)
            os << i << ',' << per_replication_total[i] << ',' << per_replication_estimation[i]
               << "\n";
        return os.str();
    }

    std::string summary() const {
        std::ostringstream os;
        os << std::setprecision(6);
        os << "kl_approx            " << kl_approx << "\n"
           << "kl_floor             " << kl_floor << "\n"
           << "mean_total_error     " << mean_total_error << "\n"
           << "mean_estimation_err  " << mean_estimation_error << "\n"
           << "residual             " << decomposition_residual << "\n"
           << "replications         " << per_replication_total.size() << "\n";
        return os.str();
    }
};

inline SimReport run_simulation(const SimSpec& spec) {
    spec.validate();
    const size_t m = spec.num_contexts;
    const size_t k = spec.num_classes;
    const auto table = spec.effective_table();

    SimReport report;
    auto weighted_kl = [&](const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
        double total = 0;
        for (size_t i = 0; i < m; ++i) {
            if (spec.context_weights[i] <= 0) continue;  // unreachable context
            total += spec.context_weights[i] * kl_categorical(a[i], b[i]);
        }
        return total;
    };
    report.kl_approx = weighted_kl(spec.p_table, spec.ps_table);
    report.kl_floor = weighted_kl(spec.p_table, table);

    std::vector<std::vector<double>> counts(m, std::vector<double>(k));
    std::vector<std::vector<double>> estimate(m, std::vector<double>(k));
    for (size_t rep = 0; rep < spec.replications; ++rep) {
        Rng rng(mix_seed(spec.seed, 0x5090u, rep));
        for (auto& row : counts) std::fill(row.begin(), row.end(), 0.0);
        for (size_t draw = 0; draw < spec.sample_size; ++draw) {
            const size_t ctx = rng.categorical(spec.context_weights);
            const size_t label = rng.categorical(table[ctx]);
            counts[ctx][label] += 1.0;
        }
        for (size_t i = 0; i < m; ++i) {
            double row_total = 0;
            for (double c : counts[i]) row_total += c;
            const double denom = row_total + spec.lambda * static_cast<double>(k);
            for (size_t y = 0; y < k; ++y) estimate[i][y] = (counts[i][y] + spec.lambda) / denom;
        }
        report.per_replication_total.push_back(weighted_kl(spec.p_table, estimate));
        report.per_replication_estimation.push_back(weighted_kl(table, estimate));
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    report.mean_total_error = mean(report.per_replication_total);
    report.mean_estimation_error = mean(report.per_replication_estimation);
    report.decomposition_residual =
        std::abs(report.mean_total_error - (report.kl_floor + report.mean_estimation_error));
    return report;
}

struct PlateauCurve {
    std::vector<size_t> sample_sizes;
    std::vector<double> mean_total_error;
    std::vector<double> mean_estimation_error;
    double kl_floor = 0;
    bool monotone_nonincreasing = true;

    std::string to_csv() const {
        std::ostringstream os;
        os << "sample_size,mean_total_error,mean_estimation_error\n" << std::setprecision(12);
        for (size_t i = 0; i < sample_sizes.size(); ++i)
            os << sample_sizes[i] << ',' << mean_total_error[i] << ','
               << mean_estimation_error[i] << "\n";
        return os.str();
    }
};

// Mean total error along an increasing sample-size grid. The curve converges
// to the floor set by the (possibly filtered) approximation error.
inline PlateauCurve plateau_curve(const SimSpec& spec, std::span<const size_t> n_grid) {
    if (n_grid.empty()) throw ConfigError("plateau_curve: empty grid");
    for (size_t i = 1; i < n_grid.size(); ++i)
        if (n_grid[i] <= n_grid[i - 1]) throw ConfigError("plateau_curve: grid must increase");
    PlateauCurve curve;
    for (size_t n : n_grid) {
        SimSpec point = spec;
        point.sample_size = n;
        auto report = run_simulation(point);
        curve.sample_sizes.push_back(n);
        curve.mean_total_error.push_back(report.mean_total_error);
        curve.mean_estimation_error.push_back(report.mean_estimation_error);
        curve.kl_floor = report.kl_floor;
    }
    for (size_t i = 1; i < curve.mean_total_error.size(); ++i)
        if (curve.mean_total_error[i] > curve.mean_total_error[i - 1])
            curve.monotone_nonincreasing = false;
    return curve;
}

inline SimSpec SimSpec::from_json(const nlohmann::json& j) try {
    SimSpec spec;
    spec.num_contexts = j.at("num_contexts").get<size_t>();
    spec.num_classes = j.at("num_classes").get<size_t>();
    if (j.contains("context_weights"))
        spec.context_weights = j["context_weights"].get<std::vector<double>>();
    else
        spec.context_weights.assign(spec.num_contexts,
                                    1.0 / static_cast<double>(spec.num_contexts));
    spec.p_table = j.at("p_table").get<std::vector<std::vector<double>>>();
    spec.ps_table = j.at("ps_table").get<std::vector<std::vector<double>>>();
    spec.sample_size = j.at("sample_size").get<size_t>();
    spec.replications = j.value("replications", size_t{1});
    spec.lambda = j.value("lambda", 0.5);
    spec.filter_fraction = j.value("filter_fraction", 0.0);
    spec.seed = j.value("seed", uint64_t{1});
    spec.validate();
    return spec;
} catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad sim spec: ") + e.what());
}

inline SimSpec SimSpec::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open sim spec: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": bad sim spec: " + e.what());
    }
    return from_json(j);
}

}  // namespace labelkit
