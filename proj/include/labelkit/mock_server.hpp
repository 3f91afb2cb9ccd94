#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "labelkit/util.hpp"

namespace labelkit {

// Scripted chat-completions server for hermetic runs. The script is
// line-delimited JSON; each rule maps an input text to a response and the
// top-logprobs attached to its first token:
//
//   {"match": "great film", "response": "positive",
//    "top_logprobs": {"positive": -0.01, "negative": -4.6}}
//   {"default": true, "response": "negative", "top_logprobs": {...}}
//
// "responses" (array) scripts successive calls for the same text, clamped to
// the last entry; "top_logprobs" may then be an aligned array of maps.
// "status_sequence" scripts per-call HTTP statuses (e.g. [500, 200]) to
// exercise retry paths. The server recovers the input text from the prompt's
// final "Text to classify:" line.
class MockLlmServer {
public:
    struct Rule {
        bool is_default = false;
        std::string match;
        std::vector<std::string> responses;
        std::vector<std::map<std::string, double>> top_logprobs;
        std::vector<int> status_sequence;
    };

    MockLlmServer() { install_routes(); }
    ~MockLlmServer() { stop(); }

    void load_script_line(const std::string& line) {
        auto j = nlohmann::json::parse(line);
        Rule rule;
        rule.is_default = j.value("default", false);
        if (!rule.is_default) rule.match = j.at("match").get<std::string>();
        if (j.contains("responses"))
            rule.responses = j["responses"].get<std::vector<std::string>>();
        else
            rule.responses.push_back(j.at("response").get<std::string>());
        if (j.contains("top_logprobs")) {
            if (j["top_logprobs"].is_array())
                for (const auto& m : j["top_logprobs"])
                    rule.top_logprobs.push_back(m.get<std::map<std::string, double>>());
            else
                rule.top_logprobs.push_back(j["top_logprobs"].get<std::map<std::string, double>>());
        }
        if (j.contains("status_sequence"))
            rule.status_sequence = j["status_sequence"].get<std::vector<int>>();
        add_rule(rule);
    }

    void load_script(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open mock script: " + path.string());
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            try {
                load_script_line(line);
            } catch (const nlohmann::json::exception& e) {
                throw Error(path.string() + ":" + std::to_string(line_no) + ": bad rule: " +
                            e.what());
            }
        }
    }

    void add_rule(Rule rule) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (rule.is_default)
            default_rule_ = std::move(rule);
        else
            rules_[rule.match] = std::move(rule);
    }

    // Binds to an ephemeral localhost port and serves on a background thread.
    int start() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw Error("mock server: failed to bind");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    // Foreground serve on a fixed port (CLI mode).
    void serve(const std::string& host, int port) {
        if (!server_.listen(host, port))
            throw Error("mock server: cannot listen on " + host + ":" + std::to_string(port));
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    size_t request_count() const { return requests_.load(); }

    // Last "Text to classify:" block of the prompt is the annotation input;
    // earlier occurrences belong to demonstrations.
    static std::string extract_input_text(const std::string& prompt) {
        static const std::string kPrefix = "Text to classify: ";
        size_t pos = prompt.rfind(kPrefix);
        if (pos == std::string::npos) return prompt;
        size_t start = pos + kPrefix.size();
        size_t end = prompt.find("\n### Output ###", start);
        if (end == std::string::npos) end = prompt.size();
        return prompt.substr(start, end - start);
    }

private:
    void install_routes() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
            requests_.fetch_add(1);
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception&) {
                res.status = 400;
                res.set_content(R"({"error":"bad json"})", "application/json");
                return;
            }
            std::string prompt;
            if (body.contains("messages") && !body["messages"].empty())
                prompt = body["messages"].back().value("content", std::string{});
            const std::string input = extract_input_text(prompt);

            Rule rule;
            size_t call_index = 0;
            {
                std::lock_guard<std::mutex> lock(mutex_);
                auto it = rules_.find(input);
                if (it != rules_.end())
                    rule = it->second;
                else if (default_rule_)
                    rule = *default_rule_;
                else {
                    res.status = 404;
                    res.set_content(R"({"error":"no rule for input"})", "application/json");
                    return;
                }
                call_index = call_counts_[input]++;
            }

            if (!rule.status_sequence.empty()) {
                int status = rule.status_sequence[std::min(call_index,
                                                           rule.status_sequence.size() - 1)];
                if (status != 200) {
                    res.status = status;
                    res.set_content(R"({"error":"scripted failure"})", "application/json");
                    return;
                }
            }

            const std::string& content =
                rule.responses[std::min(call_index, rule.responses.size() - 1)];
            nlohmann::json top = nlohmann::json::array();
            double own_logprob = 0.0;
            if (!rule.top_logprobs.empty()) {
                const auto& lp = rule.top_logprobs[std::min(call_index,
                                                            rule.top_logprobs.size() - 1)];
                std::vector<std::pair<std::string, double>> sorted(lp.begin(), lp.end());
                std::sort(sorted.begin(), sorted.end(),
                          [](const auto& a, const auto& b) { return a.second > b.second; });
                for (const auto& [token, logprob] : sorted)
                    top.push_back({{"token", token}, {"logprob", logprob}});
                if (auto it = lp.find(content); it != lp.end()) own_logprob = it->second;
            }
            nlohmann::json reply{
                {"id", "mock-cmpl"},
                {"object", "chat.completion"},
                {"model", body.value("model", std::string{"mock"})},
                {"choices",
                 nlohmann::json::array(
                     {nlohmann::json{{"index", 0},
                                     {"message", {{"role", "assistant"}, {"content", content}}},
                                     {"logprobs",
                                      {{"content", nlohmann::json::array(
                                                       {nlohmann::json{{"token", content},
                                                                       {"logprob", own_logprob},
                                                                       {"top_logprobs", top}}})}}},
                                     {"finish_reason", "stop"}}})}};
            res.set_content(reply.dump(), "application/json");
        });

        server_.Get("/mock/stats", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json j{{"requests", requests_.load()}};
            res.set_content(j.dump(), "application/json");
        });
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<size_t> requests_{0};
    mutable std::mutex mutex_;
    std::map<std::string, Rule> rules_;
    std::optional<Rule> default_rule_;
    std::map<std::string, size_t> call_counts_;
};

}  // namespace labelkit
