#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace labelkit {

// Runtime failure (I/O, endpoint, numerical). CLI maps this to exit 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or input contract violation. CLI maps this to exit 2.
struct ConfigError : Error {
    using Error::Error;
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Whitespace tokenization after lowercasing. Empty input yields no tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string lowered = to_lower(text);
    size_t i = 0;
    while (i < lowered.size()) {
        while (i < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
        size_t start = i;
        while (i < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
        if (i > start) tokens.emplace_back(lowered.substr(start, i - start));
    }
    return tokens;
}

inline std::optional<long> parse_int(std::string_view s) {
    s = trim(s);
    long value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

// FNV-1a, 64-bit. The seed perturbs the offset basis so feature spaces
// with different seeds are unrelated.
inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 0) {
    uint64_t h = 14695981039346656037ULL ^ seed;
    for (unsigned char c : std::string_view(s)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace labelkit
