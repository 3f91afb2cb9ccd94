#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "labelkit/corpus.hpp"
#include "labelkit/rng.hpp"

namespace labelkit {

// Few-shot annotation prompt: task description, label listing, seeded gold
// demonstrations, then the input to classify. Demonstrations are drawn once
// per (pool, demo_seed), so the prompt is a pure function of (spec, text) and
// an annotation pass shares one demonstration set across its examples.
struct PromptSpec {
    std::string task_description;
    LabelSpace label_space;
    size_t num_demonstrations = 3;
    Corpus demonstration_pool;
    uint64_t demo_seed = 0;

    void validate() const {
        if (task_description.empty()) throw ConfigError("prompt: empty task description");
        if (label_space.size() == 0) throw ConfigError("prompt: empty label space");
        if (num_demonstrations > demonstration_pool.size())
            throw ConfigError("prompt: demonstration pool smaller than num_demonstrations (" +
                              std::to_string(demonstration_pool.size()) + " < " +
                              std::to_string(num_demonstrations) + ")");
    }
};

struct Demonstration {
    std::string id;
    std::string text;
    std::string label_name;
};

// Uniform draw without replacement, in draw order.
inline std::vector<Demonstration> sample_demonstrations(const PromptSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.demo_seed, 0xDE30u));
    auto indices = rng.sample_without_replacement(spec.demonstration_pool.size(),
                                                  spec.num_demonstrations);
    std::vector<Demonstration> demos;
    demos.reserve(indices.size());
    for (size_t i : indices) {
        const auto& ex = spec.demonstration_pool.at(i);
        if (!ex.gold_label)
            throw Error("prompt: demonstration example " + ex.id + " has no gold label");
        demos.push_back({ex.id, ex.text, spec.label_space.name(*ex.gold_label)});
    }
    return demos;
}

inline std::string build_prompt_with_demos(const PromptSpec& spec,
                                           const std::vector<Demonstration>& demos,
                                           std::string_view text) {
    std::string out;
    out += "### Instruction ###\n";
    out += spec.task_description;
    out += "\nRespond with only the label name, nothing else.\n";
    out += "### Available Labels ###\n";
    for (const auto& name : spec.label_space.names()) {
        out += name;
        out += '\n';
    }
    out += "### Examples ###\n";
    for (size_t i = 0; i < demos.size(); ++i) {
        if (i > 0) out += '\n';
        out += "Text to classify: ";
        out += demos[i].text;
        out += "\nLabel: ";
        out += demos[i].label_name;
        out += '\n';
    }
    out += "### Input ###\n";
    out += "Text to classify: ";
    out += text;
    out += "\n### Output ###\nLabel:";
    return out;
}

inline std::string build_prompt(const PromptSpec& spec, std::string_view text) {
    return build_prompt_with_demos(spec, sample_demonstrations(spec), text);
}

}  // namespace labelkit
