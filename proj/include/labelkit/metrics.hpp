#pragma once

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "labelkit/util.hpp"

namespace labelkit {

// One training trial: predictions over a fixed test ordering plus its scores.
struct RunResult {
    int run_id = 0;
    uint64_t seed = 0;
    std::vector<int> predictions;
    double accuracy = 0;
    double macro_f1 = 0;
};

// Macro-F1 averages per-class F1 over all K declared classes; a class with
// no true and no predicted instances contributes 0 rather than being skipped,
// so minority-class failure shows up in the mean.
inline std::pair<double, double> accuracy_and_macro_f1(std::span<const int> predictions,
                                                       std::span<const int> gold, int num_classes) {
    if (predictions.size() != gold.size())
        throw Error("accuracy_and_macro_f1: prediction/gold length mismatch");
    if (predictions.empty()) throw Error("accuracy_and_macro_f1: empty input");
    const size_t k = static_cast<size_t>(num_classes);
    std::vector<size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    size_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        int p = predictions[i], g = gold[i];
        if (p < 0 || static_cast<size_t>(p) >= k || g < 0 || static_cast<size_t>(g) >= k)
            throw Error("accuracy_and_macro_f1: label out of range");
        if (p == g) {
            ++correct;
            ++tp[static_cast<size_t>(p)];
        } else {
            ++fp[static_cast<size_t>(p)];
            ++fn[static_cast<size_t>(g)];
        }
    }
    double f1_sum = 0;
    for (size_t c = 0; c < k; ++c) {
        double denom_p = static_cast<double>(tp[c] + fp[c]);
        double denom_r = static_cast<double>(tp[c] + fn[c]);
        double precision = denom_p > 0 ? static_cast<double>(tp[c]) / denom_p : 0.0;
        double recall = denom_r > 0 ? static_cast<double>(tp[c]) / denom_r : 0.0;
        f1_sum += (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    double accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());
    return {accuracy, f1_sum / static_cast<double>(k)};
}

// Krippendorff's alpha at nominal level, with runs as raters and test items
// as units. Complete data (every run predicts every item) is required.
// Computed from the coincidence matrix:
//   o_ck = sum_u (n_uc * n_uk - delta_ck * n_uc) / (m_u - 1)
//   alpha = 1 - (n - 1) * sum_{c != k} o_ck / sum_{c != k} n_c * n_k
// The degenerate case where every value in the matrix is identical has zero
// expected disagreement; by convention alpha = 1 there, with a flag.
inline double krippendorff_alpha_nominal(const std::vector<std::vector<int>>& runs,
                                         int num_classes, bool* degenerate = nullptr) {
    if (degenerate) *degenerate = false;
    if (runs.size() < 2) throw Error("krippendorff_alpha_nominal: need at least 2 runs");
    const size_t r = runs.size();
    const size_t n_items = runs[0].size();
    if (n_items == 0) throw Error("krippendorff_alpha_nominal: empty runs");
    for (const auto& run : runs)
        if (run.size() != n_items) throw Error("krippendorff_alpha_nominal: ragged run matrix");

    const size_t k = static_cast<size_t>(num_classes);
    std::vector<double> coincidence(k * k, 0.0);
    std::vector<size_t> unit_counts(k, 0);
    const double m_minus_1 = static_cast<double>(r - 1);
    for (size_t u = 0; u < n_items; ++u) {
        std::fill(unit_counts.begin(), unit_counts.end(), 0);
        for (size_t i = 0; i < r; ++i) {
            int v = runs[i][u];
            if (v < 0 || static_cast<size_t>(v) >= k)
                throw Error("krippendorff_alpha_nominal: label out of range");
            ++unit_counts[static_cast<size_t>(v)];
        }
        for (size_t c = 0; c < k; ++c) {
            if (unit_counts[c] == 0) continue;
            for (size_t d = 0; d < k; ++d) {
                if (unit_counts[d] == 0) continue;
                double pairs = static_cast<double>(unit_counts[c]) * static_cast<double>(unit_counts[d]);
                if (c == d) pairs -= static_cast<double>(unit_counts[c]);
                coincidence[c * k + d] += pairs / m_minus_1;
            }
        }
    }
    std::vector<double> margin(k, 0.0);
    double n_total = 0;
    for (size_t c = 0; c < k; ++c) {
        for (size_t d = 0; d < k; ++d) margin[c] += coincidence[c * k + d];
        n_total += margin[c];
    }
    double observed_off = 0, expected_off = 0;
    for (size_t c = 0; c < k; ++c)
        for (size_t d = 0; d < k; ++d)
            if (c != d) {
                observed_off += coincidence[c * k + d];
                expected_off += margin[c] * margin[d];
            }
    if (expected_off <= 0) {
        if (degenerate) *degenerate = true;
        return 1.0;
    }
    return 1.0 - (n_total - 1.0) * observed_off / expected_off;
}

// Fraction of items whose prediction is identical across all runs.
inline double proportion_unchanged(const std::vector<std::vector<int>>& runs) {
    if (runs.size() < 2) throw Error("proportion_unchanged: need at least 2 runs");
    const size_t n_items = runs[0].size();
    for (const auto& run : runs)
        if (run.size() != n_items) throw Error("proportion_unchanged: ragged run matrix");
    if (n_items == 0) return 1.0;
    size_t unchanged = 0;
    for (size_t u = 0; u < n_items; ++u) {
        bool same = true;
        for (size_t i = 1; i < runs.size() && same; ++i) same = runs[i][u] == runs[0][u];
        if (same) ++unchanged;
    }
    return static_cast<double>(unchanged) / static_cast<double>(n_items);
}

struct StabilityReport {
    double mu_acc = 0, sigma_acc = 0;
    double mu_f1 = 0, sigma_f1 = 0;
    double alpha_k = 0;
    double p_uc = 0;
    size_t run_count = 0;
    bool alpha_degenerate = false;
};

// Aggregates R aligned runs. Accuracy and macro-F1 are recomputed from the
// stored predictions; sigma is the population standard deviation over runs.
inline StabilityReport aggregate(const std::vector<RunResult>& runs, std::span<const int> gold,
                                 int num_classes) {
    if (runs.size() < 2) throw Error("aggregate: need at least 2 runs");
    for (const auto& run : runs)
        if (run.predictions.size() != gold.size())
            throw Error("aggregate: run predictions misaligned with gold test ordering");
    StabilityReport report;
    report.run_count = runs.size();
    std::vector<double> accs, f1s;
    std::vector<std::vector<int>> matrix;
    for (const auto& run : runs) {
        auto [acc, f1] = accuracy_and_macro_f1(run.predictions, gold, num_classes);
        accs.push_back(acc);
        f1s.push_back(f1);
        matrix.push_back(run.predictions);
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto pop_sigma = [&](const std::vector<double>& v, double mu) {
        double s = 0;
        for (double x : v) s += (x - mu) * (x - mu);
        return std::sqrt(s / static_cast<double>(v.size()));
    };
    report.mu_acc = mean(accs);
    report.sigma_acc = pop_sigma(accs, report.mu_acc);
    report.mu_f1 = mean(f1s);
    report.sigma_f1 = pop_sigma(f1s, report.mu_f1);
    report.alpha_k = krippendorff_alpha_nominal(matrix, num_classes, &report.alpha_degenerate);
    report.p_uc = proportion_unchanged(matrix);
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering. Tables scale values by 100 with two decimals and use a
// two-row layout per condition (means/alpha on the first row, deviations and
// p_uc on the second). CSV output keeps raw unscaled values.
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string condition;
    StabilityReport stats;
    size_t llm_inferences = 0;
    size_t gold_annotations = 0;
    double effective_inference_fraction = -1;  // < 0 when no pool context
};

inline std::string format_scaled(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

inline std::string render_table(const std::vector<ReportRow>& rows, bool with_cost = false) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "Label" << std::right << std::setw(9) << "mu_acc"
       << std::setw(9) << "mu_f1" << std::setw(9) << "alpha_K";
    if (with_cost) os << std::setw(12) << "llm_inf" << std::setw(10) << "gold";
    os << "\n";
    os << std::left << std::setw(16) << "" << std::right << std::setw(9) << "sig_acc"
       << std::setw(9) << "sig_f1" << std::setw(9) << "p_uc";
    if (with_cost) os << std::setw(12) << "" << std::setw(10) << "";
    os << "\n";
    os << std::string(with_cost ? 65 : 43, '-') << "\n";
    for (const auto& row : rows) {
        os << std::left << std::setw(16) << row.condition << std::right << std::setw(9)
           << format_scaled(row.stats.mu_acc) << std::setw(9) << format_scaled(row.stats.mu_f1)
           << std::setw(9) << format_scaled(row.stats.alpha_k);
        if (with_cost) {
            os << std::setw(12) << row.llm_inferences << std::setw(10) << row.gold_annotations;
        }
        os << "\n";
        os << std::left << std::setw(16) << "" << std::right << std::setw(9)
           << format_scaled(row.stats.sigma_acc) << std::setw(9) << format_scaled(row.stats.sigma_f1)
           << std::setw(9) << format_scaled(row.stats.p_uc);
        if (with_cost) {
            os << std::setw(12) << "";
            if (row.effective_inference_fraction >= 0) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", row.effective_inference_fraction);
                os << std::setw(10) << (std::string("x") + buf);
            } else {
                os << std::setw(10) << "";
            }
        }
        os << "\n";
    }
    return os.str();
}

inline std::string render_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "condition,runs,mu_acc,sigma_acc,mu_f1,sigma_f1,alpha_k,p_uc,llm_inferences,"
          "gold_annotations,effective_inference_fraction\n";
    os << std::setprecision(12);
    for (const auto& row : rows) {
        os << row.condition << ',' << row.stats.run_count << ',' << row.stats.mu_acc << ','
           << row.stats.sigma_acc << ',' << row.stats.mu_f1 << ',' << row.stats.sigma_f1 << ','
           << row.stats.alpha_k << ',' << row.stats.p_uc << ',' << row.llm_inferences << ','
           << row.gold_annotations << ',';
        if (row.effective_inference_fraction >= 0) os << row.effective_inference_fraction;
        os << "\n";
    }
    return os.str();
}

}  // namespace labelkit
