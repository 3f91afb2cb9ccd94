#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "labelkit/corpus.hpp"
#include "labelkit/metrics.hpp"
#include "labelkit/rng.hpp"
#include "labelkit/util.hpp"

namespace labelkit {

inline constexpr uint64_t kDefaultHasherSeed = 0x9e3779b9u;

// Feature hashing scheme: lowercased whitespace tokens, n-grams of the given
// orders hashed with seeded FNV-1a into hash_dim buckets. Each order's counts
// are L2-normalized separately before being merged into the bucket vector.
struct HasherSpec {
    size_t hash_dim = size_t{1} << 18;
    std::vector<int> ngram_orders{1, 2};
    uint64_t seed = kDefaultHasherSeed;
};

struct Feature {
    uint32_t index;
    double value;
};
using SparseVec = std::vector<Feature>;

inline SparseVec featurize(std::string_view text, const HasherSpec& spec) {
    auto tokens = tokenize(text);
    std::map<uint32_t, double> buckets;
    std::map<uint32_t, double> order_counts;
    for (int order : spec.ngram_orders) {
        if (order <= 0) throw ConfigError("ngram orders must be positive");
        order_counts.clear();
        const auto o = static_cast<size_t>(order);
        if (tokens.size() >= o) {
            for (size_t i = 0; i + o <= tokens.size(); ++i) {
                std::string gram = tokens[i];
                for (size_t j = 1; j < o; ++j) {
                    gram += ' ';
                    gram += tokens[i + j];
                }
                auto bucket = static_cast<uint32_t>(fnv1a64(gram, spec.seed) % spec.hash_dim);
                order_counts[bucket] += 1.0;
            }
        }
        double norm_sq = 0;
        for (const auto& [_, v] : order_counts) norm_sq += v * v;
        if (norm_sq > 0) {
            double inv = 1.0 / std::sqrt(norm_sq);
            for (const auto& [b, v] : order_counts) buckets[b] += v * inv;
        }
    }
    SparseVec out;
    out.reserve(buckets.size());
    for (const auto& [b, v] : buckets) out.push_back({b, v});
    return out;
}

struct TrainConfig {
    size_t epochs = 3;
    size_t batch_size = 16;
    size_t eval_batch_size = 32;
    double learning_rate = 0.05;  // tuned for the built-in hashed-feature model
    double weight_decay = 0.01;
    double warmup_ratio = 0.05;  // linear warmup, then linear decay to zero
    size_t hidden_dim = 256;
    size_t hash_dim = size_t{1} << 18;
    std::vector<int> ngram_orders{1, 2};
    uint64_t seed = 1;

    void validate() const {
        if (epochs == 0 || batch_size == 0 || eval_batch_size == 0 || hidden_dim == 0 ||
            hash_dim == 0)
            throw ConfigError("train config: counts must be positive");
        if (!(learning_rate > 0)) throw ConfigError("train config: learning_rate must be positive");
        if (weight_decay < 0) throw ConfigError("train config: weight_decay must be >= 0");
        if (!(warmup_ratio >= 0 && warmup_ratio < 1))
            throw ConfigError("train config: warmup_ratio must lie in [0,1)");
        if (ngram_orders.empty()) throw ConfigError("train config: ngram_orders must be non-empty");
    }
};

// One-hidden-layer rectifier network over hashed n-gram features.
// w_in is row-major by bucket (hash_dim x hidden), w_out row-major by hidden
// unit (hidden x K). Weight decay never touches biases.
struct ClassifierModel {
    HasherSpec hasher;
    LabelSpace labels;
    size_t hidden_dim = 0;
    std::vector<double> w_in;
    std::vector<double> b_hidden;
    std::vector<double> w_out;
    std::vector<double> b_out;
    bool constant = false;
    int constant_class = 0;

    size_t num_classes() const { return labels.size(); }

    // Seeded uniform init scaled by fan-in.
    void init(LabelSpace space, const TrainConfig& cfg) {
        labels = std::move(space);
        hasher = HasherSpec{cfg.hash_dim, cfg.ngram_orders, kDefaultHasherSeed};
        hidden_dim = cfg.hidden_dim;
        const size_t k = labels.size();
        w_in.assign(cfg.hash_dim * hidden_dim, 0.0);
        b_hidden.assign(hidden_dim, 0.0);
        w_out.assign(hidden_dim * k, 0.0);
        b_out.assign(k, 0.0);
        Rng rng(mix_seed(cfg.seed, 0x1217u));
        const double a_in = 1.0 / std::sqrt(static_cast<double>(cfg.hash_dim));
        for (auto& w : w_in) w = rng.real(-a_in, a_in);
        const double a_out = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
        for (auto& w : w_out) w = rng.real(-a_out, a_out);
    }

    void hidden_activations(const SparseVec& x, std::vector<double>& hidden) const {
        hidden.assign(hidden_dim, 0.0);
        for (const auto& f : x) {
            const double* row = w_in.data() + static_cast<size_t>(f.index) * hidden_dim;
            for (size_t j = 0; j < hidden_dim; ++j) hidden[j] += f.value * row[j];
        }
        for (size_t j = 0; j < hidden_dim; ++j) {
            hidden[j] += b_hidden[j];
            if (hidden[j] < 0) hidden[j] = 0;  // rectifier
        }
    }

    std::vector<double> forward(const SparseVec& x, std::vector<double>* hidden_out = nullptr) const {
        const size_t k = num_classes();
        if (constant) {
            std::vector<double> probs(k, 0.0);
            probs[static_cast<size_t>(constant_class)] = 1.0;
            return probs;
        }
        std::vector<double> hidden;
        hidden_activations(x, hidden);
        std::vector<double> logits(b_out);
        for (size_t j = 0; j < hidden_dim; ++j) {
            if (hidden[j] == 0) continue;
            const double* row = w_out.data() + j * k;
            for (size_t c = 0; c < k; ++c) logits[c] += hidden[j] * row[c];
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double z = 0;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            z += l;
        }
        for (auto& l : logits) l /= z;
        if (hidden_out) *hidden_out = std::move(hidden);
        return logits;
    }
};

struct PredictResult {
    std::vector<int> labels;
    std::vector<std::vector<double>> probs;
};

inline PredictResult predict(const ClassifierModel& model, const Corpus& corpus) {
    if (model.labels != corpus.label_space())
        throw Error("predict: model and corpus label spaces differ");
    PredictResult out;
    out.labels.reserve(corpus.size());
    out.probs.reserve(corpus.size());
    for (const auto& ex : corpus.examples()) {
        auto probs = model.forward(featurize(ex.text, model.hasher));
        int best = 0;
        for (size_t c = 1; c < probs.size(); ++c)
            if (probs[c] > probs[static_cast<size_t>(best)]) best = static_cast<int>(c);
        out.labels.push_back(best);
        out.probs.push_back(std::move(probs));
    }
    return out;
}

namespace detail {

// Cross-entropy loss and gradients for one minibatch, averaged over the
// batch. Input-matrix gradients are sparse: only rows active in the batch.
struct BatchGrads {
    std::map<uint32_t, std::vector<double>> w_in_rows;
    std::vector<double> b_hidden;
    std::vector<double> w_out;
    std::vector<double> b_out;
};

inline double batch_loss(const ClassifierModel& model, std::span<const SparseVec> features,
                         std::span<const int> targets) {
    double loss = 0;
    for (size_t i = 0; i < features.size(); ++i) {
        auto probs = model.forward(features[i]);
        loss -= std::log(std::max(probs[static_cast<size_t>(targets[i])], 1e-300));
    }
    return loss / static_cast<double>(features.size());
}

inline double batch_loss_and_grads(const ClassifierModel& model,
                                   std::span<const SparseVec> features,
                                   std::span<const int> targets, BatchGrads& grads) {
    const size_t k = model.num_classes();
    const size_t h = model.hidden_dim;
    grads.w_in_rows.clear();
    grads.b_hidden.assign(h, 0.0);
    grads.w_out.assign(h * k, 0.0);
    grads.b_out.assign(k, 0.0);
    const double inv_n = 1.0 / static_cast<double>(features.size());
    double loss = 0;
    std::vector<double> hidden, dlogits(k), dhidden(h);
    for (size_t i = 0; i < features.size(); ++i) {
        auto probs = model.forward(features[i], &hidden);
        const auto y = static_cast<size_t>(targets[i]);
        loss -= std::log(std::max(probs[y], 1e-300));
        for (size_t c = 0; c < k; ++c) dlogits[c] = (probs[c] - (c == y ? 1.0 : 0.0)) * inv_n;
        for (size_t j = 0; j < h; ++j) {
            const double a = hidden[j];
            double dh = 0;
            const double* wrow = model.w_out.data() + j * k;
            double* grow = grads.w_out.data() + j * k;
            for (size_t c = 0; c < k; ++c) {
                grow[c] += a * dlogits[c];
                dh += wrow[c] * dlogits[c];
            }
            dhidden[j] = a > 0 ? dh : 0.0;  // rectifier gate
            grads.b_hidden[j] += dhidden[j];
        }
        for (size_t c = 0; c < k; ++c) grads.b_out[c] += dlogits[c];
        for (const auto& f : features[i]) {
            auto [it, inserted] = grads.w_in_rows.try_emplace(f.index);
            if (inserted) it->second.assign(h, 0.0);
            auto& row = it->second;
            for (size_t j = 0; j < h; ++j) row[j] += f.value * dhidden[j];
        }
    }
    return loss * inv_n;
}

}  // namespace detail

// Linear warmup over floor(warmup_ratio * total) steps, then linear decay.
inline double scheduled_lr(const TrainConfig& cfg, size_t step, size_t total_steps) {
    const auto warmup =
        static_cast<size_t>(std::floor(cfg.warmup_ratio * static_cast<double>(total_steps)));
    if (warmup > 0 && step < warmup)
        return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total_steps <= warmup) return cfg.learning_rate;
    return cfg.learning_rate *
           (1.0 - static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup));
}

struct EpochStats {
    double train_loss = 0;
    double val_macro_f1 = 0;
};

struct TrainOutcome {
    ClassifierModel model;  // best epoch snapshot by validation macro-F1
    std::vector<EpochStats> history;
    size_t best_epoch = 0;
};

// Minibatch gradient descent with decoupled weight decay and the linear
// warmup/decay schedule. Shuffling, init and batching are fully determined by
// cfg.seed, so runs are bit-reproducible. Decay on the input matrix is
// applied lazily per row (rows untouched by a batch accumulate their decay as
// a running product and are caught up on next touch or at epoch end), which
// keeps steps sparse at large hash_dim. After every epoch the model is scored
// on validation macro-F1; the best epoch's snapshot is returned (best kept in
// memory alongside the live weights, ties to the earlier epoch).
inline TrainOutcome train(const Corpus& train_corpus, const Corpus& validation,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (train_corpus.empty()) throw Error("train: empty training corpus");
    if (train_corpus.label_space() != validation.label_space())
        throw Error("train: train/validation label spaces differ");

    const size_t n = train_corpus.size();
    std::vector<int> targets(n);
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = train_corpus.at(i);
        if (!ex.gold_label) throw Error("train: example " + ex.id + " has no label");
        targets[i] = *ex.gold_label;
    }
    std::vector<int> val_targets;
    val_targets.reserve(validation.size());
    for (const auto& ex : validation.examples()) {
        if (!ex.gold_label) throw Error("train: validation example " + ex.id + " has no label");
        val_targets.push_back(*ex.gold_label);
    }

    TrainOutcome outcome;
    ClassifierModel model;
    model.init(train_corpus.label_space(), cfg);

    // Degenerate single-class training set: constant predictor.
    if (std::all_of(targets.begin(), targets.end(), [&](int t) { return t == targets[0]; })) {
        std::cerr << "[labelkit] warning: training set has a single class; "
                     "returning a constant predictor\n";
        model.constant = true;
        model.constant_class = targets[0];
        outcome.model = std::move(model);
        return outcome;
    }

    std::vector<SparseVec> features(n);
    for (size_t i = 0; i < n; ++i) features[i] = featurize(train_corpus.at(i).text, model.hasher);

    const size_t k = model.num_classes();
    const size_t h = model.hidden_dim;
    const size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const size_t total_steps = cfg.epochs * steps_per_epoch;

    // Running decay product: cum_decay[t] = prod_{s<t} (1 - lr_s * wd).
    std::vector<double> cum_decay(total_steps + 1, 1.0);
    for (size_t t = 0; t < total_steps; ++t)
        cum_decay[t + 1] = cum_decay[t] * (1.0 - scheduled_lr(cfg, t, total_steps) * cfg.weight_decay);
    std::vector<uint32_t> row_synced(cfg.hash_dim, 0);  // next step whose decay is unapplied

    auto catch_up_row = [&](uint32_t r, size_t step) {
        if (row_synced[r] == step) return;
        const double factor = cum_decay[step] / cum_decay[row_synced[r]];
        double* row = model.w_in.data() + static_cast<size_t>(r) * h;
        for (size_t j = 0; j < h; ++j) row[j] *= factor;
        row_synced[r] = static_cast<uint32_t>(step);
    };

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    detail::BatchGrads grads;
    ClassifierModel best;
    double best_f1 = -1;
    size_t step = 0;
    std::vector<SparseVec> batch_feats;
    std::vector<int> batch_targets;

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5u, epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0;
        for (size_t start = 0; start < n; start += cfg.batch_size, ++step) {
            const size_t end = std::min(n, start + cfg.batch_size);
            batch_feats.clear();
            batch_targets.clear();
            for (size_t i = start; i < end; ++i) {
                batch_feats.push_back(features[order[i]]);
                batch_targets.push_back(targets[order[i]]);
            }
            for (const auto& fv : batch_feats)
                for (const auto& f : fv) catch_up_row(f.index, step);

            double loss = detail::batch_loss_and_grads(model, batch_feats, batch_targets, grads);
            if (!std::isfinite(loss))
                throw Error("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                            std::to_string(epoch) + "); lower the learning rate");
            epoch_loss += loss * static_cast<double>(end - start);

            const double lr = scheduled_lr(cfg, step, total_steps);
            const double decay_rate = lr * cfg.weight_decay;
            for (auto& [r, grow] : grads.w_in_rows) {
                double* row = model.w_in.data() + static_cast<size_t>(r) * h;
                for (size_t j = 0; j < h; ++j) {
                    const double decay_term = decay_rate * row[j];
                    row[j] -= lr * grow[j];
                    row[j] -= decay_term;
                }
                row_synced[r] = static_cast<uint32_t>(step + 1);
            }
            for (size_t j = 0; j < h; ++j) model.b_hidden[j] -= lr * grads.b_hidden[j];
            for (size_t i = 0; i < h * k; ++i) {
                const double decay_term = decay_rate * model.w_out[i];
                model.w_out[i] -= lr * grads.w_out[i];
                model.w_out[i] -= decay_term;
            }
            for (size_t c = 0; c < k; ++c) model.b_out[c] -= lr * grads.b_out[c];
        }
        // Materialize pending decay so validation and snapshots see final rows.
        for (uint32_t r = 0; r < cfg.hash_dim; ++r) catch_up_row(r, step);

        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(n);
        auto val_pred = predict(model, validation);
        stats.val_macro_f1 =
            accuracy_and_macro_f1(val_pred.labels, val_targets, static_cast<int>(k)).second;
        outcome.history.push_back(stats);
        if (stats.val_macro_f1 > best_f1) {
            best_f1 = stats.val_macro_f1;
            best = model;
            outcome.best_epoch = epoch;
        }
    }
    outcome.model = std::move(best);
    return outcome;
}

// Max relative error between analytic and central finite-difference gradients
// over a seeded random subset of parameters. Use a small batch and a small
// hash_dim; the probe step is 1e-4. Hidden units whose pre-activation sits
// within the probe step of the rectifier kink are not probed (the one-sided
// derivative there makes finite differences meaningless, not the gradient
// wrong).
inline double gradient_check(ClassifierModel& model, const Corpus& batch, uint64_t probe_seed = 17,
                             size_t probes_per_tensor = 12) {
    if (model.constant) throw Error("gradient_check: constant model has no gradients");
    std::vector<SparseVec> features;
    std::vector<int> targets;
    for (const auto& ex : batch.examples()) {
        if (!ex.gold_label) throw Error("gradient_check: example " + ex.id + " has no label");
        features.push_back(featurize(ex.text, model.hasher));
        targets.push_back(*ex.gold_label);
    }
    detail::BatchGrads grads;
    detail::batch_loss_and_grads(model, features, targets, grads);

    const size_t h = model.hidden_dim;
    const size_t k = model.num_classes();

    // Distance of each hidden unit's pre-activation from the kink, minimized
    // over the batch.
    constexpr double kKinkMargin = 1e-3;
    std::vector<double> kink_distance(h, std::numeric_limits<double>::infinity());
    for (const auto& x : features) {
        for (size_t j = 0; j < h; ++j) {
            double pre = model.b_hidden[j];
            for (const auto& f : x) pre += f.value * model.w_in[static_cast<size_t>(f.index) * h + j];
            kink_distance[j] = std::min(kink_distance[j], std::abs(pre));
        }
    }
    auto unit_safe = [&](size_t j) { return kink_distance[j] > kKinkMargin; };

    // Active input rows carry the only nonzero w_in gradients; probe those.
    std::vector<uint32_t> active_rows;
    for (const auto& [r, _] : grads.w_in_rows) active_rows.push_back(r);

    Rng rng(mix_seed(probe_seed, 0xC0DEu));
    const double step = 1e-4;
    double max_rel_err = 0;

    auto probe = [&](double* param, double analytic) {
        const double saved = *param;
        *param = saved + step;
        const double up = detail::batch_loss(model, features, targets);
        *param = saved - step;
        const double down = detail::batch_loss(model, features, targets);
        *param = saved;
        const double numeric = (up - down) / (2 * step);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        max_rel_err = std::max(max_rel_err, rel);
    };

    for (size_t p = 0; p < probes_per_tensor * 4 && !active_rows.empty(); ++p) {
        uint32_t r = active_rows[rng.below(active_rows.size())];
        size_t j = rng.below(h);
        if (!unit_safe(j)) continue;
        probe(&model.w_in[static_cast<size_t>(r) * h + j], grads.w_in_rows.at(r)[j]);
    }
    for (size_t p = 0; p < probes_per_tensor * 4; ++p) {
        size_t j = rng.below(h);
        if (!unit_safe(j)) continue;
        probe(&model.b_hidden[j], grads.b_hidden[j]);
    }
    for (size_t p = 0; p < probes_per_tensor; ++p) {
        size_t i = rng.below(h * k);
        probe(&model.w_out[i], grads.w_out[i]);
    }
    for (size_t c = 0; c < k; ++c) probe(&model.b_out[c], grads.b_out[c]);
    return max_rel_err;
}

// ---------------------------------------------------------------------------
// Model file: little-endian binary, layout
//   magic "LKMD", u32 version,
//   u64 hash_dim, u32 n_orders, i32 orders[], u64 hasher_seed,
//   u64 hidden_dim, u64 num_labels, { u32 len, bytes } per label name,
//   u8 constant, i32 constant_class,
//   then each weight tensor as u64 count + raw doubles
//   (b_hidden, w_in, w_out, b_out).
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("model file truncated");
    return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    write_pod<uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in) {
    auto count = read_pod<uint64_t>(in);
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error("model file truncated");
    return v;
}

}  // namespace detail

inline void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out.write("LKMD", 4);
    detail::write_pod<uint32_t>(out, 1);
    detail::write_pod<uint64_t>(out, model.hasher.hash_dim);
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(model.hasher.ngram_orders.size()));
    for (int o : model.hasher.ngram_orders) detail::write_pod<int32_t>(out, o);
    detail::write_pod<uint64_t>(out, model.hasher.seed);
    detail::write_pod<uint64_t>(out, model.hidden_dim);
    detail::write_pod<uint64_t>(out, model.labels.size());
    for (const auto& name : model.labels.names()) {
        detail::write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    detail::write_pod<uint8_t>(out, model.constant ? 1 : 0);
    detail::write_pod<int32_t>(out, model.constant_class);
    detail::write_doubles(out, model.b_hidden);
    detail::write_doubles(out, model.w_in);
    detail::write_doubles(out, model.w_out);
    detail::write_doubles(out, model.b_out);
    if (!out) throw Error("write failed: " + path.string());
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LKMD", 4) != 0)
        throw Error("not a model file: " + path.string());
    auto version = detail::read_pod<uint32_t>(in);
    if (version != 1) throw Error("unsupported model version " + std::to_string(version));
    ClassifierModel model;
    model.hasher.hash_dim = detail::read_pod<uint64_t>(in);
    auto n_orders = detail::read_pod<uint32_t>(in);
    model.hasher.ngram_orders.clear();
    for (uint32_t i = 0; i < n_orders; ++i)
        model.hasher.ngram_orders.push_back(detail::read_pod<int32_t>(in));
    model.hasher.seed = detail::read_pod<uint64_t>(in);
    model.hidden_dim = detail::read_pod<uint64_t>(in);
    auto num_labels = detail::read_pod<uint64_t>(in);
    std::vector<std::string> names;
    for (uint64_t i = 0; i < num_labels; ++i) {
        auto len = detail::read_pod<uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw Error("model file truncated");
        names.push_back(std::move(name));
    }
    model.labels = LabelSpace(names);
    model.constant = detail::read_pod<uint8_t>(in) != 0;
    model.constant_class = detail::read_pod<int32_t>(in);
    model.b_hidden = detail::read_doubles(in);
    model.w_in = detail::read_doubles(in);
    model.w_out = detail::read_doubles(in);
    model.b_out = detail::read_doubles(in);
    if (model.w_in.size() != model.hasher.hash_dim * model.hidden_dim ||
        model.w_out.size() != model.hidden_dim * model.labels.size())
        throw Error("model file has inconsistent tensor shapes");
    return model;
}

}  // namespace labelkit
