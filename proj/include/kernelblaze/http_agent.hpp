#pragma once

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "kernelblaze/agents.hpp"
#include "kernelblaze/errors.hpp"

namespace kblaze {

struct HttpAgentConfig {
    std::string base_url;       // scheme://host[:port][/path-prefix]
    std::string api_key;
    std::string model = "kernelblaze-default";
    std::string completions_path = "/v1/chat/completions";
    int retry_attempts = 3;
    int backoff_base_ms = 1000; // 1s, 2s, 4s
    int max_concurrent = 4;

    /// Credential from KERNELBLAZE_API_KEY, endpoint from KERNELBLAZE_BASE_URL.
    static HttpAgentConfig from_env() {
        HttpAgentConfig config;
        if (const char* url = std::getenv("KERNELBLAZE_BASE_URL")) config.base_url = url;
        if (const char* key = std::getenv("KERNELBLAZE_API_KEY")) config.api_key = key;
        return config;
    }
};

/// Chat-completion client: POSTs a chat-style JSON body and returns the
/// first choice plus usage counts. Transport errors and 5xx responses are
/// retried with exponential backoff; concurrent requests are capped.
class HttpAgent final : public Agent {
public:
    explicit HttpAgent(HttpAgentConfig config) : config_(std::move(config)) {
        if (config_.base_url.empty())
            throw Error(ErrorCode::ConfigError, "agent base URL not configured (KERNELBLAZE_BASE_URL)");
        std::size_t scheme = config_.base_url.find("://");
        std::size_t path_start = scheme == std::string::npos
                                     ? config_.base_url.find('/')
                                     : config_.base_url.find('/', scheme + 3);
        if (path_start == std::string::npos) {
            host_ = config_.base_url;
            path_ = config_.completions_path;
        } else {
            host_ = config_.base_url.substr(0, path_start);
            std::string prefix = config_.base_url.substr(path_start);
            while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
            path_ = prefix + config_.completions_path;
        }
    }

    AgentResponse complete(const AgentRequest& request) override {
        validate_request(request);
        if (config_.api_key.empty())
            throw Error(ErrorCode::CredentialMissing, "KERNELBLAZE_API_KEY is not set");

        nlohmann::json body{
            {"model", config_.model},
            {"messages", nlohmann::json::array({nlohmann::json{
                             {"role", "user"}, {"content", request.rendered_prompt}}})},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens},
        };
        const std::string payload = body.dump();

        Slot slot(*this);
        const auto started = std::chrono::steady_clock::now();
        std::string last_failure = "no attempt made";
        for (int attempt = 0; attempt < config_.retry_attempts; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(config_.backoff_base_ms << (attempt - 1)));
            httplib::Client client(host_);
            client.set_read_timeout(120, 0);
            httplib::Headers headers{{"Authorization", "Bearer " + config_.api_key}};
            auto result = client.Post(path_, headers, payload, "application/json");
            if (!result) {
                last_failure = "transport error " + httplib::to_string(result.error());
                continue;
            }
            if (result->status >= 500) {
                last_failure = "server status " + std::to_string(result->status);
                continue;
            }
            if (result->status != 200)
                throw Error(ErrorCode::AgentUnavailable,
                            "status " + std::to_string(result->status) + ": " + result->body);
            return parse_completion(result->body, started);
        }
        throw Error(ErrorCode::AgentUnavailable,
                    "retries exhausted after " + std::to_string(config_.retry_attempts) +
                        " attempts; last failure: " + last_failure);
    }

private:
    struct Slot {
        explicit Slot(HttpAgent& agent) : agent_(agent) {
            std::unique_lock<std::mutex> lock(agent_.slots_mutex_);
            agent_.slots_cv_.wait(lock,
                                  [&] { return agent_.slots_in_use_ < agent_.config_.max_concurrent; });
            ++agent_.slots_in_use_;
        }
        ~Slot() {
            {
                std::lock_guard<std::mutex> lock(agent_.slots_mutex_);
                --agent_.slots_in_use_;
            }
            agent_.slots_cv_.notify_one();
        }
        HttpAgent& agent_;
    };

    AgentResponse parse_completion(const std::string& body,
                                   std::chrono::steady_clock::time_point started) const {
        nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
        if (doc.is_discarded() || !doc.contains("choices") || !doc.at("choices").is_array() ||
            doc.at("choices").empty())
            throw Error(ErrorCode::AgentUnavailable, "malformed completion response body");
        const auto& choice = doc.at("choices").at(0);
        AgentResponse response;
        if (choice.contains("message") && choice.at("message").contains("content"))
            response.text = choice.at("message").at("content").get<std::string>();
        else if (choice.contains("text"))
            response.text = choice.at("text").get<std::string>();
        else
            throw Error(ErrorCode::AgentUnavailable, "completion response carries no text");
        if (doc.contains("usage") && doc.at("usage").is_object()) {
            response.prompt_tokens = doc.at("usage").value("prompt_tokens", std::int64_t{0});
            response.completion_tokens = doc.at("usage").value("completion_tokens", std::int64_t{0});
        }
        response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - started)
                                  .count();
        return response;
    }

    HttpAgentConfig config_;
    std::string host_;
    std::string path_;
    std::mutex slots_mutex_;
    std::condition_variable slots_cv_;
    int slots_in_use_ = 0;
};

} // namespace kblaze
