#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelkit/annotation.hpp"
#include "labelkit/corpus.hpp"
#include "labelkit/rng.hpp"

namespace labelkit {

// Program-generated classification corpus: each class owns a private
// vocabulary, a shared pool supplies ambiguous tokens, and skewed priors give
// the last class a minority tail. Overlap controls task difficulty.
struct ToySpec {
    size_t num_classes = 3;
    std::vector<double> class_priors{0.5, 0.35, 0.15};
    size_t vocab_per_class = 30;
    size_t shared_vocab = 60;
    double overlap = 0.5;  // probability a token comes from the shared pool
    size_t tokens_per_text = 8;
    size_t size = 3000;
    uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("toy: need at least 2 classes");
        if (class_priors.size() != num_classes) throw ConfigError("toy: priors size != classes");
        if (!(overlap >= 0 && overlap < 1)) throw ConfigError("toy: overlap must lie in [0,1)");
        if (tokens_per_text == 0 || size == 0 || vocab_per_class == 0)
            throw ConfigError("toy: counts must be positive");
    }

    static ToySpec from_json(const nlohmann::json& j) {
        ToySpec spec;
        spec.num_classes = j.value("num_classes", spec.num_classes);
        if (j.contains("class_priors"))
            spec.class_priors = j["class_priors"].get<std::vector<double>>();
        else if (spec.num_classes != 3)
            spec.class_priors.assign(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
        spec.vocab_per_class = j.value("vocab_per_class", spec.vocab_per_class);
        spec.shared_vocab = j.value("shared_vocab", spec.shared_vocab);
        spec.overlap = j.value("overlap", spec.overlap);
        spec.tokens_per_text = j.value("tokens_per_text", spec.tokens_per_text);
        spec.size = j.value("size", spec.size);
        spec.seed = j.value("seed", spec.seed);
        spec.validate();
        return spec;
    }
};

inline LabelSpace toy_label_space(const ToySpec& spec) {
    std::vector<std::string> names;
    for (size_t c = 0; c < spec.num_classes; ++c) names.push_back("class_" + std::to_string(c));
    return LabelSpace(names);
}

inline Corpus generate_toy_corpus(const ToySpec& spec) {
    spec.validate();
    LabelSpace space = toy_label_space(spec);
    Rng rng(mix_seed(spec.seed, 0x707u));
    std::vector<Example> examples;
    examples.reserve(spec.size);
    for (size_t i = 0; i < spec.size; ++i) {
        const auto cls = static_cast<int>(rng.categorical(spec.class_priors));
        std::string text;
        for (size_t t = 0; t < spec.tokens_per_text; ++t) {
            if (!text.empty()) text += ' ';
            if (rng.real() < spec.overlap) {
                text += "sw" + std::to_string(rng.below(spec.shared_vocab));
            } else {
                text += "c" + std::to_string(cls) + "w" + std::to_string(rng.below(spec.vocab_per_class));
            }
        }
        examples.push_back({"toy" + ordinal_id(i), std::move(text), cls});
    }
    return Corpus(std::move(space), std::move(examples), "all");
}

// Hermetic stand-in for the LLM annotator: a per-class confusion matrix
// applied to gold labels, with an optional text-dependent bias rule. Examples
// containing a trigger token are always assigned the bias target with a
// confident probability vector, independent of the demonstration seed —
// systematic errors no ensemble disagreement can catch. All other draws
// re-randomize per demonstration seed, which is what makes replicates flip.
struct NoiseModel {
    std::vector<std::vector<double>> confusion;  // K x K, rows sum to 1
    std::vector<std::string> trigger_tokens;
    int trigger_target = 0;
    double trigger_peak = 0.97;
    double probs_sharpening = 0.5;  // confusion-row share of class_probs; the rest peaks the sampled label
    uint64_t seed = 0;

    void validate(size_t num_classes) const {
        if (confusion.size() != num_classes) throw ConfigError("noise: confusion rows != classes");
        for (const auto& row : confusion) {
            if (row.size() != num_classes) throw ConfigError("noise: confusion cols != classes");
            double s = 0;
            for (double v : row) {
                if (v < 0) throw ConfigError("noise: negative confusion entry");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) throw ConfigError("noise: confusion row not stochastic");
        }
        if (trigger_target < 0 || static_cast<size_t>(trigger_target) >= num_classes)
            throw ConfigError("noise: trigger_target out of range");
        if (!(trigger_peak > 0 && trigger_peak < 1)) throw ConfigError("noise: bad trigger_peak");
        // Above 0.5 the confusion row could out-vote the sampled label and
        // break the argmax contract of annotation records.
        if (!(probs_sharpening >= 0 && probs_sharpening <= 0.5))
            throw ConfigError("noise: probs_sharpening must lie in [0, 0.5]");
    }

    static NoiseModel from_json(const nlohmann::json& j) {
        NoiseModel noise;
        noise.confusion = j.at("confusion").get<std::vector<std::vector<double>>>();
        if (j.contains("trigger_tokens"))
            noise.trigger_tokens = j["trigger_tokens"].get<std::vector<std::string>>();
        noise.trigger_target = j.value("trigger_target", 0);
        noise.trigger_peak = j.value("trigger_peak", 0.97);
        noise.probs_sharpening = j.value("probs_sharpening", 0.5);
        noise.seed = j.value("seed", uint64_t{0});
        return noise;
    }
};

// One annotation pass over a gold-labeled corpus under the noise model.
// Deterministic in (corpus, model seed, demo_seed).
inline std::vector<AnnotationRecord> noise_annotate(const Corpus& corpus, const NoiseModel& noise,
                                                    uint64_t demo_seed) {
    const size_t k = corpus.num_classes();
    noise.validate(k);
    std::set<std::string> triggers(noise.trigger_tokens.begin(), noise.trigger_tokens.end());
    std::vector<AnnotationRecord> records;
    records.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto& ex = corpus.at(i);
        if (!ex.gold_label) throw Error("noise_annotate: example " + ex.id + " has no gold label");
        AnnotationRecord rec;
        rec.example_id = ex.id;
        rec.demo_seed = demo_seed;

        bool triggered = false;
        if (!triggers.empty()) {
            for (const auto& token : tokenize(ex.text)) {
                if (triggers.count(token)) {
                    triggered = true;
                    break;
                }
            }
        }
        if (triggered) {
            rec.class_probs.assign(k, (1.0 - noise.trigger_peak) / static_cast<double>(k - 1));
            rec.class_probs[static_cast<size_t>(noise.trigger_target)] = noise.trigger_peak;
            rec.predicted_label = noise.trigger_target;
        } else {
            const auto& row = noise.confusion[static_cast<size_t>(*ex.gold_label)];
            Rng rng(mix_seed(noise.seed, i, demo_seed));
            const auto sampled = static_cast<int>(rng.categorical(row));
            // Sharpened mixture: the sampled label keeps the argmax while the
            // confusion row shapes the uncertainty.
            rec.class_probs.assign(k, 0.0);
            for (size_t y = 0; y < k; ++y)
                rec.class_probs[y] = noise.probs_sharpening * row[y];
            rec.class_probs[static_cast<size_t>(sampled)] += 1.0 - noise.probs_sharpening;
            rec.predicted_label = sampled;
        }
        rec.entropy = entropy(rec.class_probs);
        rec.replicate_labels = {rec.predicted_label};
        rec.raw_response = corpus.label_space().name(rec.predicted_label);
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<AnnotationRecord> noise_ensemble_annotate(const Corpus& corpus,
                                                             const NoiseModel& noise,
                                                             uint64_t demo_seed, size_t k_passes) {
    if (k_passes < 2) throw ConfigError("noise_ensemble_annotate: k must be >= 2");
    auto records = noise_annotate(corpus, noise, demo_seed);
    for (size_t pass = 1; pass < k_passes; ++pass) {
        auto next = noise_annotate(corpus, noise, demo_seed + pass);
        for (size_t i = 0; i < records.size(); ++i)
            records[i].replicate_labels.push_back(next[i].predicted_label);
    }
    return records;
}

}  // namespace labelkit
