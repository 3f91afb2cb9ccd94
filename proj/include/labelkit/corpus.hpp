#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "labelkit/rng.hpp"
#include "labelkit/util.hpp"

namespace labelkit {

// Ordered set of class names. Ids are the 0-based positions; name lookup is
// case-insensitive after trimming.
class LabelSpace {
public:
    LabelSpace() = default;

    explicit LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.empty()) throw ConfigError("label space must have at least one class");
        for (size_t i = 0; i < names_.size(); ++i) {
            std::string key = to_lower(trim(names_[i]));
            if (key.empty()) throw ConfigError("label names must be non-empty");
            if (!id_by_key_.emplace(key, static_cast<int>(i)).second)
                throw ConfigError("duplicate label name: " + names_[i]);
        }
    }

    // Accepts either an inline comma-separated list ("negative,positive") or a
    // path to a text file with one label per line.
    static LabelSpace from_spec(const std::string& spec) {
        if (std::filesystem::exists(spec) && !std::filesystem::is_directory(spec)) {
            std::ifstream in(spec);
            if (!in) throw ConfigError("cannot open label-space file: " + spec);
            std::vector<std::string> names;
            std::string line;
            while (std::getline(in, line)) {
                std::string t(trim(line));
                if (!t.empty()) names.push_back(t);
            }
            return LabelSpace(names);
        }
        std::vector<std::string> names;
        for (auto& part : split(spec, ',')) {
            std::string t(trim(part));
            if (!t.empty()) names.push_back(t);
        }
        return LabelSpace(names);
    }

    size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    const std::string& name(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= names_.size())
            throw Error("label id out of range: " + std::to_string(id));
        return names_[static_cast<size_t>(id)];
    }

    std::optional<int> id_of(std::string_view name) const {
        auto it = id_by_key_.find(to_lower(trim(name)));
        if (it == id_by_key_.end()) return std::nullopt;
        return it->second;
    }

    // Resolves a label given as a class name or as an integer id (possibly in
    // string form).
    std::optional<int> resolve(const nlohmann::json& label) const {
        if (label.is_number_integer()) {
            long v = label.get<long>();
            if (v < 0 || static_cast<size_t>(v) >= names_.size()) return std::nullopt;
            return static_cast<int>(v);
        }
        if (label.is_string()) {
            const std::string s = label.get<std::string>();
            if (auto id = id_of(s)) return id;
            if (auto v = parse_int(s)) {
                if (*v >= 0 && static_cast<size_t>(*v) < names_.size()) return static_cast<int>(*v);
            }
        }
        return std::nullopt;
    }

    bool operator==(const LabelSpace& other) const { return names_ == other.names_; }
    bool operator!=(const LabelSpace& other) const { return !(*this == other); }

private:
    std::vector<std::string> names_;
    std::map<std::string, int> id_by_key_;
};

struct Example {
    std::string id;
    std::string text;
    std::optional<int> gold_label;
};

class Corpus {
public:
    Corpus() = default;
    Corpus(LabelSpace space, std::vector<Example> examples, std::string split = "train")
        : label_space_(std::move(space)), examples_(std::move(examples)), split_(std::move(split)) {
        validate();
    }

    const LabelSpace& label_space() const { return label_space_; }
    const std::vector<Example>& examples() const { return examples_; }
    const Example& at(size_t i) const { return examples_.at(i); }
    size_t size() const { return examples_.size(); }
    bool empty() const { return examples_.empty(); }
    const std::string& split() const { return split_; }
    void set_split(std::string tag) { split_ = std::move(tag); }

    size_t num_classes() const { return label_space_.size(); }

    std::vector<size_t> class_histogram() const {
        std::vector<size_t> counts(label_space_.size(), 0);
        for (const auto& ex : examples_)
            if (ex.gold_label) ++counts[static_cast<size_t>(*ex.gold_label)];
        return counts;
    }

    size_t gold_count() const {
        size_t n = 0;
        for (const auto& ex : examples_)
            if (ex.gold_label) ++n;
        return n;
    }

    std::optional<size_t> index_of(std::string_view id) const {
        auto it = index_by_id_.find(std::string(id));
        if (it == index_by_id_.end()) return std::nullopt;
        return it->second;
    }

    // New corpus holding the selected examples, in ascending original order.
    Corpus subset(std::vector<size_t> indices, std::string split_tag) const {
        std::sort(indices.begin(), indices.end());
        std::vector<Example> out;
        out.reserve(indices.size());
        for (size_t i : indices) out.push_back(examples_.at(i));
        return Corpus(label_space_, std::move(out), std::move(split_tag));
    }

private:
    void validate() {
        index_by_id_.clear();
        for (size_t i = 0; i < examples_.size(); ++i) {
            const auto& ex = examples_[i];
            if (!index_by_id_.emplace(ex.id, i).second)
                throw ConfigError("duplicate example id: " + ex.id);
            if (ex.gold_label &&
                (*ex.gold_label < 0 || static_cast<size_t>(*ex.gold_label) >= label_space_.size()))
                throw ConfigError("example " + ex.id + ": gold label out of range");
        }
    }

    LabelSpace label_space_;
    std::vector<Example> examples_;
    std::string split_ = "train";
    std::map<std::string, size_t> index_by_id_;
};

// ---------------------------------------------------------------------------
// File format: UTF-8, one JSON record per line. Fields:
//   text  (required)  the document
//   label (optional)  class name or integer id
//   id    (optional)  stable identifier; when absent, the 0-based record
//                     ordinal is assigned, zero-padded to six digits
// ---------------------------------------------------------------------------

inline std::string ordinal_id(size_t ordinal) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", ordinal);
    return buf;
}

inline Corpus load_corpus(const std::filesystem::path& path, const LabelSpace& space,
                          std::string split_tag = "train") {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus file: " + path.string());
    std::vector<Example> examples;
    std::string line;
    size_t line_no = 0;
    size_t ordinal = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": malformed record: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string())
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": record must be an object with a string \"text\" field");
        Example ex;
        ex.text = rec["text"].get<std::string>();
        ex.id = rec.contains("id") && rec["id"].is_string() ? rec["id"].get<std::string>()
                                                            : ordinal_id(ordinal);
        if (rec.contains("label") && !rec["label"].is_null()) {
            auto id = space.resolve(rec["label"]);
            if (!id)
                throw Error(path.string() + ":" + std::to_string(line_no) + ": unknown label " +
                            rec["label"].dump());
            ex.gold_label = *id;
        }
        examples.push_back(std::move(ex));
        ++ordinal;
    }
    return Corpus(space, std::move(examples), std::move(split_tag));
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    for (const auto& ex : corpus.examples()) {
        nlohmann::json rec;
        rec["id"] = ex.id;
        rec["text"] = ex.text;
        if (ex.gold_label) rec["label"] = corpus.label_space().name(*ex.gold_label);
        out << rec.dump() << "\n";
    }
    if (!out) throw Error("write failed: " + path.string());
}

struct SplitTriple {
    Corpus train;
    Corpus validation;
    Corpus test;
};

// Seeded uniform subsampling and splitting. The training cap bounds
// train+validation together; the remainder feeds the test draw. Splits are
// id-disjoint and deterministic given the seed.
inline SplitTriple cap_and_split(const Corpus& corpus, size_t train_cap, size_t test_cap,
                                 double validation_fraction, uint64_t seed) {
    if (train_cap == 0 || test_cap == 0) throw ConfigError("caps must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation_fraction must lie in (0,1)");
    const size_t n = corpus.size();
    if (n < 3)
        throw ConfigError("corpus too small to split: need at least 1 example per split, have " +
                          std::to_string(n));

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0x5711u));
    rng.shuffle(order);

    const size_t n_trainval = std::min(train_cap, n - 1);
    if (n_trainval < 2)
        throw ConfigError("train cap leaves no room for a validation split");
    size_t n_val = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(n_trainval)));
    n_val = std::clamp<size_t>(n_val, 1, n_trainval - 1);
    const size_t n_train = n_trainval - n_val;
    const size_t n_test = std::min(test_cap, n - n_trainval);

    auto slice = [&](size_t begin, size_t count) {
        return std::vector<size_t>(order.begin() + static_cast<long>(begin),
                                   order.begin() + static_cast<long>(begin + count));
    };
    SplitTriple out{corpus.subset(slice(0, n_train), "train"),
                    corpus.subset(slice(n_train, n_val), "validation"),
                    corpus.subset(slice(n_trainval, n_test), "test")};
    return out;
}

struct ClassStats {
    std::vector<size_t> counts;
    double imbalance_ratio;  // max count / min count over all declared classes
};

inline ClassStats class_stats(const Corpus& corpus) {
    ClassStats stats;
    stats.counts = corpus.class_histogram();
    size_t total = 0;
    for (size_t c : stats.counts) total += c;
    if (total == 0) throw Error("class_stats: corpus has no gold labels");
    size_t mx = 0, mn = std::numeric_limits<size_t>::max();
    for (size_t c : stats.counts) {
        mx = std::max(mx, c);
        mn = std::min(mn, c);
    }
    stats.imbalance_ratio = mn == 0 ? std::numeric_limits<double>::infinity()
                                    : static_cast<double>(mx) / static_cast<double>(mn);
    return stats;
}

}  // namespace labelkit
