#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "labelkit/util.hpp"

namespace labelkit {

// SplitMix64 step. Used both as the core generator and to derive
// independent streams from a master seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t s = a;
    uint64_t m = splitmix64(s) ^ (b + 0x9e3779b97f4a7c15ULL);
    return splitmix64(m);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

// Deterministic generator with identical output on every platform.
// The standard <random> distributions are implementation-defined, which
// would break bit-reproducibility of runs across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Warm up so that small seeds do not produce correlated leading draws.
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // Unbiased integer in [0, bound) by rejection.
    uint64_t below(uint64_t bound) {
        if (bound == 0) throw Error("Rng::below: bound must be positive");
        uint64_t threshold = (0 - bound) % bound;
        while (true) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double real(double lo, double hi) { return lo + (hi - lo) * real(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in draw order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        if (k > n) throw Error("sample_without_replacement: k exceeds population");
        std::vector<size_t> pool(n);
        for (size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<size_t> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + static_cast<size_t>(below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    // Index draw from an unnormalized weight vector.
    size_t categorical(std::span<const double> weights) {
        double total = 0;
        for (double w : weights) total += w;
        if (total <= 0) throw Error("categorical: weights must have positive mass");
        double u = real() * total;
        double acc = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

private:
    uint64_t state_;
};

}  // namespace labelkit
