// Independent reference implementations used only by tests. These stay
// deliberately naive — direct enumeration and textbook formulas — so they
// cannot share a bug with the library code they check.
#pragma once

#include <cmath>
#include <vector>

#include "labelkit/rng.hpp"
#include "labelkit/theory_sim.hpp"

namespace oracles {

// Krippendorff's alpha by explicit pairwise enumeration: observed
// disagreement over all ordered rater pairs within each unit (weighted by
// 1/(m_u - 1)), expected disagreement over all ordered pairs of pooled
// values.
inline double alpha_nominal(const std::vector<std::vector<int>>& runs) {
    const size_t r = runs.size();
    const size_t n_items = runs[0].size();
    const size_t n = r * n_items;
    double d_obs = 0;
    for (size_t u = 0; u < n_items; ++u) {
        double unit = 0;
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < r; ++j)
                if (i != j && runs[i][u] != runs[j][u]) unit += 1.0;
        d_obs += unit / static_cast<double>(r - 1);
    }
    d_obs /= static_cast<double>(n);
    std::vector<int> pooled;
    pooled.reserve(n);
    for (const auto& run : runs)
        for (int v : run) pooled.push_back(v);
    double d_exp = 0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (i != j && pooled[i] != pooled[j]) d_exp += 1.0;
    d_exp /= static_cast<double>(n) * static_cast<double>(n - 1);
    if (d_exp == 0) return 1.0;
    return 1.0 - d_obs / d_exp;
}

// Accuracy and macro-F1 from an explicit confusion matrix.
inline std::pair<double, double> accuracy_macro_f1(const std::vector<int>& pred,
                                                   const std::vector<int>& gold, int k) {
    std::vector<std::vector<double>> confusion(static_cast<size_t>(k),
                                               std::vector<double>(static_cast<size_t>(k), 0.0));
    double correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        confusion[static_cast<size_t>(gold[i])][static_cast<size_t>(pred[i])] += 1.0;
        if (gold[i] == pred[i]) correct += 1.0;
    }
    double f1_sum = 0;
    for (size_t c = 0; c < static_cast<size_t>(k); ++c) {
        const double tp = confusion[c][c];
        double pred_total = 0, gold_total = 0;
        for (size_t o = 0; o < static_cast<size_t>(k); ++o) {
            pred_total += confusion[o][c];
            gold_total += confusion[c][o];
        }
        const double precision = pred_total > 0 ? tp / pred_total : 0.0;
        const double recall = gold_total > 0 ? tp / gold_total : 0.0;
        f1_sum += (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    return {correct / static_cast<double>(pred.size()), f1_sum / static_cast<double>(k)};
}

// Uniform-ish point on the probability simplex (normalized exponentials).
inline std::vector<double> random_simplex(labelkit::Rng& rng, size_t k) {
    std::vector<double> p(k);
    double total = 0;
    for (auto& v : p) {
        v = -std::log(std::max(rng.real(), 1e-300));
        total += v;
    }
    for (auto& v : p) v /= total;
    return p;
}

inline double kl_rows(const std::vector<double>& p, const std::vector<double>& q) {
    double kl = 0;
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
    return kl;
}

// Constructs tables whose per-context divergence KL(p_i || q_i) equals
// target_kl by construction: q_i mixes p_i toward uniform, with the mixing
// weight found by bisection. The analytically known approximation error then
// serves as its own oracle for the simulator.
inline labelkit::SimSpec make_divergent_spec(size_t m, size_t k, double target_kl, uint64_t seed) {
    labelkit::SimSpec spec;
    spec.num_contexts = m;
    spec.num_classes = k;
    spec.context_weights.assign(m, 1.0 / static_cast<double>(m));
    labelkit::Rng rng(labelkit::mix_seed(seed, 0x7AB1Eu));
    const std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
    for (size_t i = 0; i < m; ++i) {
        // Peaked true row so the divergence target is reachable.
        std::vector<double> p(k);
        double total = 0;
        for (size_t y = 0; y < k; ++y) {
            p[y] = (y == i % k ? 4.0 : 0.4) + 0.2 * rng.real();
            total += p[y];
        }
        for (auto& v : p) v /= total;
        auto mix = [&](double eps) {
            std::vector<double> q(k);
            for (size_t y = 0; y < k; ++y) q[y] = (1.0 - eps) * p[y] + eps * uniform[y];
            return q;
        };
        double lo = 0.0, hi = 0.9999;
        if (target_kl > 0) {
            for (int iter = 0; iter < 200; ++iter) {
                double mid = 0.5 * (lo + hi);
                if (kl_rows(p, mix(mid)) < target_kl)
                    lo = mid;
                else
                    hi = mid;
            }
        }
        spec.p_table.push_back(p);
        spec.ps_table.push_back(target_kl > 0 ? mix(0.5 * (lo + hi)) : p);
    }
    return spec;
}

}  // namespace oracles
