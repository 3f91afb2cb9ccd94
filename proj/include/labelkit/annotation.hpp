#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelkit/util.hpp"

namespace labelkit {

// Shannon entropy of a probability vector, in nats, with 0 ln 0 = 0.
// The input must be normalized to 1 within 1e-9.
inline double entropy(std::span<const double> probs) {
    double sum = 0;
    for (double p : probs) {
        if (p < 0) throw Error("entropy: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw Error("entropy: input not normalized (sum = " + std::to_string(sum) + ")");
    double h = 0;
    for (double p : probs)
        if (p > 0) h -= p * std::log(p);
    return h;
}

// One LLM annotation of one example. class_probs always sums to 1 within
// 1e-9 and predicted_label is its argmax (lowest id on ties). For ensemble
// annotation, replicate_labels holds one label per pass, ordered by demo
// seed; otherwise it has length 1.
struct AnnotationRecord {
    std::string example_id;
    int predicted_label = 0;
    std::vector<double> class_probs;
    double entropy = 0;
    std::vector<int> replicate_labels;
    std::string raw_response;
    uint64_t demo_seed = 0;
    bool invalid = false;
};

inline int argmax_lowest_id(std::span<const double> probs) {
    int best = 0;
    for (size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

inline nlohmann::json record_to_json(const AnnotationRecord& r) {
    return nlohmann::json{{"example_id", r.example_id},
                          {"predicted_label", r.predicted_label},
                          {"class_probs", r.class_probs},
                          {"entropy", r.entropy},
                          {"replicate_labels", r.replicate_labels},
                          {"raw_response", r.raw_response},
                          {"demo_seed", r.demo_seed},
                          {"invalid", r.invalid}};
}

inline AnnotationRecord record_from_json(const nlohmann::json& j) {
    AnnotationRecord r;
    r.example_id = j.at("example_id").get<std::string>();
    r.predicted_label = j.at("predicted_label").get<int>();
    r.class_probs = j.at("class_probs").get<std::vector<double>>();
    r.entropy = j.at("entropy").get<double>();
    r.replicate_labels = j.at("replicate_labels").get<std::vector<int>>();
    r.raw_response = j.value("raw_response", std::string{});
    r.demo_seed = j.at("demo_seed").get<uint64_t>();
    r.invalid = j.value("invalid", false);
    return r;
}

// Annotation store keyed by (model, demo_seed, example_id). Optionally backed
// by an append-only line-delimited file; on reload the last write for a key
// wins. Writes are serialized, so concurrent annotation workers may insert.
class AnnotationCache {
public:
    AnnotationCache() = default;

    static AnnotationCache open(const std::filesystem::path& path) {
        AnnotationCache cache;
        cache.path_ = path;
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            if (!in) throw Error("cannot open cache file: " + path.string());
            std::string line;
            size_t line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                if (trim(line).empty()) continue;
                try {
                    auto j = nlohmann::json::parse(line);
                    auto record = record_from_json(j.at("record"));
                    cache.entries_[key(j.at("model").get<std::string>(),
                                       j.at("demo_seed").get<uint64_t>(), record.example_id)] =
                        record;
                } catch (const nlohmann::json::exception& e) {
                    throw Error(path.string() + ":" + std::to_string(line_no) +
                                ": bad cache line: " + e.what());
                }
            }
        }
        return cache;
    }

    std::optional<AnnotationRecord> lookup(const std::string& model, uint64_t demo_seed,
                                           const std::string& example_id) const {
        std::lock_guard<std::mutex> lock(*mutex_);
        auto it = entries_.find(key(model, demo_seed, example_id));
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& model, uint64_t demo_seed, const AnnotationRecord& record) {
        std::lock_guard<std::mutex> lock(*mutex_);
        entries_[key(model, demo_seed, record.example_id)] = record;
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            if (!out) throw Error("cannot append to cache file: " + path_.string());
            nlohmann::json j{{"model", model}, {"demo_seed", demo_seed},
                             {"record", record_to_json(record)}};
            out << j.dump() << "\n";
        }
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(*mutex_);
        return entries_.size();
    }

private:
    static std::string key(const std::string& model, uint64_t demo_seed, const std::string& id) {
        return model + "\x1f" + std::to_string(demo_seed) + "\x1f" + id;
    }

    std::filesystem::path path_;
    std::map<std::string, AnnotationRecord> entries_;
    std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

}  // namespace labelkit
