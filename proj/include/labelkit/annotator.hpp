#pragma once

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "labelkit/annotation.hpp"
#include "labelkit/chat_client.hpp"
#include "labelkit/corpus.hpp"
#include "labelkit/prompt.hpp"

namespace labelkit {

// Guided decoding is emulated client-side: the response is parsed by
// case-insensitive exact match of its trimmed prefix against label names
// (longest name wins, followed by a word boundary), then against integer ids.
inline std::optional<int> constrained_match(std::string_view response, const LabelSpace& space) {
    const std::string text = to_lower(trim(response));
    if (text.empty()) return std::nullopt;
    auto boundary_ok = [&](size_t len) {
        return len == text.size() || !std::isalnum(static_cast<unsigned char>(text[len]));
    };
    std::optional<int> best;
    size_t best_len = 0;
    for (size_t i = 0; i < space.size(); ++i) {
        const std::string name = to_lower(trim(space.name(static_cast<int>(i))));
        if (name.size() > text.size() || name.size() < best_len) continue;
        if (text.compare(0, name.size(), name) == 0 && boundary_ok(name.size())) {
            if (name.size() > best_len) {
                best = static_cast<int>(i);
                best_len = name.size();
            }
        }
    }
    if (best) return best;
    size_t digits = 0;
    while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) ++digits;
    if (digits > 0 && boundary_ok(digits)) {
        if (auto v = parse_int(text.substr(0, digits))) {
            if (*v >= 0 && static_cast<size_t>(*v) < space.size()) return static_cast<int>(*v);
        }
    }
    return std::nullopt;
}

// Class probabilities from the first generated position's top-logprobs. Token
// strings are mapped to labels with the constrained rule; matched masses add
// up per label. Labels with no mass receive a 1e-6 floor before
// renormalization. When no token maps to any label, the content-parsed label
// carries mass 1.
inline std::vector<double> probs_from_logprobs(const std::vector<TokenLogProb>& top,
                                               const LabelSpace& space,
                                               std::optional<int> content_label) {
    const size_t k = space.size();
    std::vector<double> masses(k, 0.0);
    double total = 0;
    for (const auto& tl : top) {
        if (auto label = constrained_match(tl.token, space)) {
            const double mass = std::exp(tl.logprob);
            masses[static_cast<size_t>(*label)] += mass;
            total += mass;
        }
    }
    if (total <= 0 && content_label) masses[static_cast<size_t>(*content_label)] = 1.0;
    constexpr double kFloor = 1e-6;
    for (auto& m : masses)
        if (m <= 0) m = kFloor;
    double z = 0;
    for (double m : masses) z += m;
    for (auto& m : masses) m /= z;
    return masses;
}

enum class InvalidPolicy { strict, uniform_random };

struct AnnotateOptions {
    InvalidPolicy invalid_policy = InvalidPolicy::strict;
    double abort_failure_fraction = 0.1;  // aggregate failures above this abort the run
    std::ostream* progress = nullptr;
};

struct AnnotateStats {
    size_t requests = 0;         // HTTP requests issued this run (re-asks included)
    size_t cache_hits = 0;
    size_t invalid = 0;
    size_t request_failures = 0;
    size_t llm_inferences = 0;   // effective (example, seed) passes, cached or not
};

struct AnnotationRun {
    std::vector<AnnotationRecord> records;  // corpus order
    AnnotateStats stats;
};

namespace detail {

inline AnnotationRecord finalize_record(std::string example_id, std::vector<double> probs,
                                        std::string raw_response, uint64_t demo_seed,
                                        bool invalid) {
    AnnotationRecord rec;
    rec.example_id = std::move(example_id);
    rec.class_probs = std::move(probs);
    rec.predicted_label = argmax_lowest_id(rec.class_probs);
    rec.entropy = entropy(rec.class_probs);
    rec.replicate_labels = {rec.predicted_label};
    rec.raw_response = std::move(raw_response);
    rec.demo_seed = demo_seed;
    rec.invalid = invalid;
    return rec;
}

// Uninformative record for an unparseable or failed example. Probabilities
// are uniform with a 1e-9 tilt toward the assigned label so that the argmax
// invariant holds while entropy stays at the ceiling.
inline AnnotationRecord invalid_record(const std::string& example_id, size_t ordinal, size_t k,
                                       const AnnotateOptions& options, uint64_t demo_seed,
                                       std::string raw_response) {
    int label = 0;
    if (options.invalid_policy == InvalidPolicy::uniform_random) {
        Rng rng(mix_seed(demo_seed, 0xBAD5EEDu, ordinal));
        label = static_cast<int>(rng.below(k));
    }
    constexpr double kTilt = 1e-9;
    std::vector<double> probs(k, (1.0 - kTilt) / static_cast<double>(k));
    probs[static_cast<size_t>(label)] += kTilt;
    return finalize_record(example_id, std::move(probs), std::move(raw_response), demo_seed, true);
}

}  // namespace detail

// Annotates one pass over the corpus: cache-first, bounded in-flight
// requests, output in corpus order regardless of completion order. An
// unparseable response gets one re-ask; a second failure flags the record
// invalid per the policy. Request-level failures above the abort threshold
// fail the run.
inline AnnotationRun annotate_corpus(const Corpus& corpus, const PromptSpec& spec,
                                     const EndpointConfig& endpoint, AnnotationCache& cache,
                                     const AnnotateOptions& options = {}) {
    if (corpus.empty()) throw ConfigError("annotate_corpus: empty corpus");
    if (spec.label_space.size() < 2) throw ConfigError("annotate_corpus: need at least 2 classes");
    endpoint.validate();
    const auto demos = sample_demonstrations(spec);
    for (const auto& demo : demos)
        if (corpus.index_of(demo.id))
            throw ConfigError("annotate_corpus: demonstration " + demo.id +
                              " overlaps an example being annotated");

    const size_t n = corpus.size();
    const size_t k = spec.label_space.size();
    AnnotationRun run;
    run.records.resize(n);
    run.stats.llm_inferences = n;

    std::vector<size_t> missing;
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = corpus.at(i);
        if (auto hit = cache.lookup(endpoint.model, spec.demo_seed, ex.id)) {
            run.records[i] = *hit;
            ++run.stats.cache_hits;
        } else {
            missing.push_back(i);
        }
    }

    std::atomic<size_t> cursor{0};
    std::atomic<size_t> requests{0};
    std::atomic<size_t> invalid_count{0};
    std::mutex failure_mutex;
    std::vector<std::pair<size_t, std::string>> failures;
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    auto worker = [&] {
        try {
            ChatClient client(endpoint);
            while (true) {
                const size_t slot = cursor.fetch_add(1);
                if (slot >= missing.size()) break;
                const size_t idx = missing[slot];
                const auto& ex = corpus.at(idx);
                const std::string prompt = build_prompt_with_demos(spec, demos, ex.text);
                try {
                    requests.fetch_add(1);
                    ChatResponse response = client.complete(prompt);
                    auto label = constrained_match(response.content, spec.label_space);
                    if (!label) {
                        requests.fetch_add(1);
                        response = client.complete(prompt);  // one re-ask
                        label = constrained_match(response.content, spec.label_space);
                    }
                    if (!label) {
                        invalid_count.fetch_add(1);
                        run.records[idx] = detail::invalid_record(ex.id, idx, k, options,
                                                                  spec.demo_seed, response.content);
                        continue;
                    }
                    auto probs = probs_from_logprobs(response.first_token_top_logprobs,
                                                     spec.label_space, label);
                    run.records[idx] = detail::finalize_record(ex.id, std::move(probs),
                                                               response.content, spec.demo_seed,
                                                               false);
                    cache.put(endpoint.model, spec.demo_seed, run.records[idx]);
                } catch (const EndpointError& e) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    failures.emplace_back(idx, e.what());
                }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(fatal_mutex);
            if (!fatal) fatal = std::current_exception();
        }
    };

    const size_t n_workers =
        std::min<size_t>(static_cast<size_t>(std::max(endpoint.max_in_flight, 1)), missing.size());
    std::vector<std::thread> threads;
    for (size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (fatal) std::rethrow_exception(fatal);

    run.stats.requests = requests.load();
    run.stats.invalid = invalid_count.load();
    run.stats.request_failures = failures.size();

    if (static_cast<double>(failures.size()) >
        options.abort_failure_fraction * static_cast<double>(n)) {
        std::string detail = "annotate_corpus: " + std::to_string(failures.size()) + " of " +
                             std::to_string(n) + " requests failed";
        std::sort(failures.begin(), failures.end());
        detail += " (first: example " + corpus.at(failures.front().first).id + ": " +
                  failures.front().second + ")";
        throw Error(detail);
    }
    // Surviving failures fall back to the invalid policy.
    for (const auto& [idx, message] : failures) {
        run.records[idx] = detail::invalid_record(corpus.at(idx).id, idx, k, options,
                                                  spec.demo_seed, "request failed: " + message);
        ++run.stats.invalid;
    }

    if (options.progress) {
        *options.progress << "[annotate] " << n << " examples: " << run.stats.cache_hits
                          << " cached, " << run.stats.requests << " requests, "
                          << run.stats.invalid << " invalid, " << run.stats.request_failures
                          << " failed\n";
    }
    return run;
}

// Single-example annotation; request failures propagate.
inline AnnotationRecord annotate(const Example& example, const PromptSpec& spec,
                                 const EndpointConfig& endpoint) {
    Corpus one(spec.label_space, {example}, "adhoc");
    AnnotationCache scratch;
    AnnotateOptions options;
    options.abort_failure_fraction = 0;  // any failure aborts
    return annotate_corpus(one, spec, endpoint, scratch, options).records.front();
}

// k annotation passes with consecutive demo seeds (spec.demo_seed + 0..k-1).
// Output records carry replicate_labels ordered by seed; the first pass
// provides the probability vector and raw response. The effective inference
// cost is k passes over the corpus.
inline AnnotationRun ensemble_annotate(const Corpus& corpus, const PromptSpec& spec,
                                       const EndpointConfig& endpoint, AnnotationCache& cache,
                                       size_t k, const AnnotateOptions& options = {}) {
    if (k < 2) throw ConfigError("ensemble_annotate: k must be >= 2");
    AnnotationRun out;
    for (size_t pass = 0; pass < k; ++pass) {
        PromptSpec pass_spec = spec;
        pass_spec.demo_seed = spec.demo_seed + pass;
        AnnotationRun one = annotate_corpus(corpus, pass_spec, endpoint, cache, options);
        if (pass == 0) {
            out.records = std::move(one.records);
            out.stats = one.stats;
        } else {
            for (size_t i = 0; i < corpus.size(); ++i) {
                out.records[i].replicate_labels.push_back(one.records[i].predicted_label);
                out.records[i].invalid = out.records[i].invalid || one.records[i].invalid;
            }
            out.stats.requests += one.stats.requests;
            out.stats.cache_hits += one.stats.cache_hits;
            out.stats.invalid += one.stats.invalid;
            out.stats.request_failures += one.stats.request_failures;
            out.stats.llm_inferences += one.stats.llm_inferences;
        }
    }
    return out;
}

}  // namespace labelkit
