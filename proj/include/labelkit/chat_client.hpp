#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "labelkit/util.hpp"

namespace labelkit {

// Chat-completions endpoint. The API key is read from the named environment
// variable at request time; an unset variable simply omits the header, which
// is what local open-weight servers expect.
struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8321";
    std::string model = "local";
    std::string api_key_env = "LABELKIT_API_KEY";
    double timeout_s = 60.0;
    int max_in_flight = 8;
    int max_retries = 3;
    int retry_base_ms = 200;
    int max_completion_tokens = 8;
    int top_logprobs = 10;

    void validate() const {
        if (base_url.empty()) throw ConfigError("endpoint: base_url required");
        if (max_in_flight < 1) throw ConfigError("endpoint: max_in_flight must be >= 1");
        if (max_retries < 0) throw ConfigError("endpoint: max_retries must be >= 0");
        if (top_logprobs < 1) throw ConfigError("endpoint: top_logprobs must be >= 1");
    }
};

struct TokenLogProb {
    std::string token;
    double logprob = 0;
};

struct ChatResponse {
    std::string content;
    std::vector<TokenLogProb> first_token_top_logprobs;
};

struct EndpointError : Error {
    using Error::Error;
};

// Blocking client for one worker thread. Label passes run at temperature 0
// with few output tokens and top-logprobs enabled; transient failures
// (transport errors, 429, 5xx) retry with bounded exponential backoff.
class ChatClient {
public:
    explicit ChatClient(const EndpointConfig& cfg) : cfg_(cfg), http_(cfg.base_url) {
        http_.set_connection_timeout(std::chrono::duration<double>(cfg.timeout_s));
        http_.set_read_timeout(std::chrono::duration<double>(cfg.timeout_s));
        if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
            http_.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
    }

    ChatResponse complete(const std::string& prompt) {
        nlohmann::json body{{"model", cfg_.model},
                            {"messages", nlohmann::json::array({nlohmann::json{
                                             {"role", "user"}, {"content", prompt}}})},
                            {"temperature", 0},
                            {"max_tokens", cfg_.max_completion_tokens},
                            {"logprobs", true},
                            {"top_logprobs", cfg_.top_logprobs}};
        const std::string payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                auto delay = std::chrono::milliseconds(
                    std::min<long long>(static_cast<long long>(cfg_.retry_base_ms) << (attempt - 1),
                                        10000));
                std::this_thread::sleep_for(delay);
            }
            auto res = http_.Post("/v1/chat/completions", payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw EndpointError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                                    res->body);
            return parse_response(res->body);
        }
        throw EndpointError("endpoint unreachable after " + std::to_string(cfg_.max_retries + 1) +
                            " attempts (" + last_error + ")");
    }

private:
    static ChatResponse parse_response(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw EndpointError(std::string("bad endpoint response: ") + e.what());
        }
        if (!j.contains("choices") || j["choices"].empty())
            throw EndpointError("endpoint response has no choices");
        const auto& choice = j["choices"][0];
        ChatResponse out;
        out.content = choice.at("message").at("content").get<std::string>();
        if (choice.contains("logprobs") && choice["logprobs"].is_object()) {
            const auto& content = choice["logprobs"].value("content", nlohmann::json::array());
            if (!content.empty()) {
                for (const auto& tl : content[0].value("top_logprobs", nlohmann::json::array()))
                    out.first_token_top_logprobs.push_back(
                        {tl.at("token").get<std::string>(), tl.at("logprob").get<double>()});
            }
        }
        return out;
    }

    EndpointConfig cfg_;
    httplib::Client http_;
};

}  // namespace labelkit
