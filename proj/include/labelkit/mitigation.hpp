#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelkit/annotation.hpp"
#include "labelkit/corpus.hpp"

namespace labelkit {

enum class LabelSource : uint8_t { synthetic, gold_replaced };

enum class FilterMode { none, entropy_rank, consistency_ensemble };

struct FilterPolicy {
    FilterMode mode = FilterMode::none;
    double alpha_percent = 25;  // entropy_rank
    size_t k = 5;               // consistency_ensemble

    void validate() const {
        if (mode == FilterMode::entropy_rank && !(alpha_percent > 0 && alpha_percent < 100.0 + 1e-12))
            throw ConfigError("alpha_percent must lie in (0, 100]");
        if (mode == FilterMode::consistency_ensemble && k < 2)
            throw ConfigError("consistency ensemble needs k >= 2");
    }
};

// One LLM inference = one (example, demo seed) annotation pass; one gold
// annotation = one human label consumed by a replacement.
struct CostLedger {
    size_t llm_inferences = 0;
    size_t gold_annotations = 0;
};

// Final training label per example plus the audit trail of what was replaced.
struct PatchedLabels {
    std::vector<std::string> example_ids;
    std::vector<int> labels;
    std::vector<LabelSource> source;
    std::vector<double> entropies;
    size_t replacement_count = 0;
    CostLedger cost;
};

namespace detail {

inline int gold_label_or_throw(const Corpus& gold, const std::string& id, const char* op) {
    auto idx = gold.index_of(id);
    if (!idx) throw Error(std::string(op) + ": example " + id + " not present in gold corpus");
    const auto& ex = gold.at(*idx);
    if (!ex.gold_label) throw Error(std::string(op) + ": missing gold label for example " + id);
    return *ex.gold_label;
}

inline void check_coverage(const std::vector<AnnotationRecord>& records, const Corpus& gold,
                           const char* op) {
    if (records.size() != gold.size())
        throw Error(std::string(op) + ": records do not cover the corpus (" +
                    std::to_string(records.size()) + " records, " + std::to_string(gold.size()) +
                    " examples)");
    for (const auto& r : records)
        if (!gold.index_of(r.example_id))
            throw Error(std::string(op) + ": record id " + r.example_id + " not in corpus");
}

}  // namespace detail

// Replacement budget for the top-alpha-percent rule. ceil keeps any positive
// alpha replacing at least one example.
inline size_t replacement_budget(double alpha_percent, size_t n) {
    return static_cast<size_t>(
        std::min<double>(static_cast<double>(n),
                         std::ceil(alpha_percent / 100.0 * static_cast<double>(n))));
}

// Replaces the ceil(alpha/100 * N) highest-entropy annotations with gold
// labels. Ranking, not a fixed threshold; ties at the cutoff go to the lower
// example ordinal.
inline PatchedLabels entropy_rank_filter(const std::vector<AnnotationRecord>& records,
                                         const Corpus& gold, double alpha_percent) {
    if (!(alpha_percent > 0 && alpha_percent <= 100.0))
        throw ConfigError("entropy_rank_filter: alpha_percent must lie in (0, 100]");
    detail::check_coverage(records, gold, "entropy_rank_filter");
    const size_t n = records.size();
    const size_t budget = replacement_budget(alpha_percent, n);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].entropy > records[b].entropy;  // stable: ordinal breaks ties
    });

    PatchedLabels out;
    out.example_ids.reserve(n);
    out.labels.resize(n);
    out.source.assign(n, LabelSource::synthetic);
    out.entropies.reserve(n);
    for (const auto& r : records) {
        out.example_ids.push_back(r.example_id);
        out.entropies.push_back(r.entropy);
    }
    for (size_t i = 0; i < n; ++i) out.labels[i] = records[i].predicted_label;
    for (size_t rank = 0; rank < budget; ++rank) {
        size_t idx = order[rank];
        out.labels[idx] = detail::gold_label_or_throw(gold, records[idx].example_id,
                                                      "entropy_rank_filter");
        out.source[idx] = LabelSource::gold_replaced;
    }
    out.replacement_count = budget;
    out.cost.llm_inferences = n;
    out.cost.gold_annotations = budget;
    return out;
}

// Keeps unanimous ensemble annotations; any disagreement between replicates
// is resolved by the gold label. Majority vote is available behind a flag but
// the default is strict unanimity.
inline PatchedLabels consistency_resolve(const std::vector<AnnotationRecord>& records,
                                         const Corpus& gold, bool majority_vote = false) {
    detail::check_coverage(records, gold, "consistency_resolve");
    PatchedLabels out;
    const size_t n = records.size();
    out.example_ids.reserve(n);
    out.labels.resize(n);
    out.source.assign(n, LabelSource::synthetic);
    out.entropies.reserve(n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        const auto& r = records[i];
        if (r.replicate_labels.size() < 2)
            throw Error("consistency_resolve: record " + r.example_id +
                        " has fewer than 2 replicates");
        if (k == 0) k = r.replicate_labels.size();
        if (r.replicate_labels.size() != k)
            throw Error("consistency_resolve: inconsistent replicate counts");
        out.example_ids.push_back(r.example_id);
        out.entropies.push_back(r.entropy);

        bool unanimous = std::all_of(r.replicate_labels.begin(), r.replicate_labels.end(),
                                     [&](int l) { return l == r.replicate_labels.front(); });
        if (unanimous) {
            out.labels[i] = r.replicate_labels.front();
        } else if (majority_vote) {
            std::vector<int> counts(gold.num_classes(), 0);
            for (int l : r.replicate_labels) ++counts.at(static_cast<size_t>(l));
            int best = 0;
            for (size_t c = 1; c < counts.size(); ++c)
                if (counts[c] > counts[static_cast<size_t>(best)]) best = static_cast<int>(c);
            out.labels[i] = best;
        } else {
            out.labels[i] = detail::gold_label_or_throw(gold, r.example_id, "consistency_resolve");
            out.source[i] = LabelSource::gold_replaced;
            ++out.replacement_count;
        }
    }
    out.cost.llm_inferences = k * n;
    out.cost.gold_annotations = out.replacement_count;
    return out;
}

// Routes records through the configured mitigation. Mode none passes the
// synthetic labels straight through (still validating coverage).
inline PatchedLabels apply_filter(const std::vector<AnnotationRecord>& records, const Corpus& gold,
                                  const FilterPolicy& policy) {
    policy.validate();
    switch (policy.mode) {
        case FilterMode::entropy_rank:
            return entropy_rank_filter(records, gold, policy.alpha_percent);
        case FilterMode::consistency_ensemble:
            return consistency_resolve(records, gold);
        case FilterMode::none:
            break;
    }
    detail::check_coverage(records, gold, "apply_filter");
    PatchedLabels out;
    out.labels.reserve(records.size());
    out.source.assign(records.size(), LabelSource::synthetic);
    for (const auto& r : records) {
        out.example_ids.push_back(r.example_id);
        out.labels.push_back(r.predicted_label);
        out.entropies.push_back(r.entropy);
    }
    out.cost.llm_inferences = records.size();
    return out;
}

// Empirical realization of the filter indicator: 1 where the synthetic label
// was kept, 0 where it was replaced.
struct MixtureAudit {
    std::vector<uint8_t> kept_synthetic;
    double replacement_fraction = 0;
    std::vector<double> per_class_replacement_rate;  // grouped by final label
};

inline MixtureAudit mixture_audit(const PatchedLabels& patched, size_t num_classes) {
    MixtureAudit audit;
    const size_t n = patched.labels.size();
    audit.kept_synthetic.resize(n);
    std::vector<size_t> class_total(num_classes, 0), class_replaced(num_classes, 0);
    size_t replaced = 0;
    for (size_t i = 0; i < n; ++i) {
        bool kept = patched.source[i] == LabelSource::synthetic;
        audit.kept_synthetic[i] = kept ? 1 : 0;
        auto c = static_cast<size_t>(patched.labels[i]);
        ++class_total.at(c);
        if (!kept) {
            ++replaced;
            ++class_replaced[c];
        }
    }
    audit.replacement_fraction = n == 0 ? 0.0 : static_cast<double>(replaced) / static_cast<double>(n);
    audit.per_class_replacement_rate.resize(num_classes, 0.0);
    for (size_t c = 0; c < num_classes; ++c)
        if (class_total[c] > 0)
            audit.per_class_replacement_rate[c] =
                static_cast<double>(class_replaced[c]) / static_cast<double>(class_total[c]);
    return audit;
}

// Serializes patched labels in the corpus file format, with a sidecar audit
// file carrying per-example source flags, entropies and replicates.
inline void save_patched_labels(const PatchedLabels& patched, const Corpus& corpus,
                                const std::vector<AnnotationRecord>& records,
                                const std::filesystem::path& labels_path,
                                const std::filesystem::path& audit_path) {
    std::ofstream out(labels_path);
    if (!out) throw Error("cannot open for writing: " + labels_path.string());
    for (size_t i = 0; i < patched.labels.size(); ++i) {
        auto idx = corpus.index_of(patched.example_ids[i]);
        if (!idx) throw Error("save_patched_labels: id not in corpus: " + patched.example_ids[i]);
        nlohmann::json rec;
        rec["id"] = patched.example_ids[i];
        rec["text"] = corpus.at(*idx).text;
        rec["label"] = corpus.label_space().name(patched.labels[i]);
        out << rec.dump() << "\n";
    }
    std::ofstream audit(audit_path);
    if (!audit) throw Error("cannot open for writing: " + audit_path.string());
    for (size_t i = 0; i < patched.labels.size(); ++i) {
        nlohmann::json rec;
        rec["id"] = patched.example_ids[i];
        rec["source"] = patched.source[i] == LabelSource::synthetic ? "synthetic" : "gold_replaced";
        rec["entropy"] = patched.entropies[i];
        rec["replicates"] = records[i].replicate_labels;
        audit << rec.dump() << "\n";
    }
}

}  // namespace labelkit
