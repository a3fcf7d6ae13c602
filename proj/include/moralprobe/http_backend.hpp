#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "moralprobe/backend.hpp"
#include "moralprobe/config.hpp"
#include "moralprobe/errors.hpp"

namespace moralprobe {

// Bounded-permit gate for concurrent in-flight requests.
class InFlightGate {
public:
    explicit InFlightGate(unsigned permits) : permits_(permits == 0 ? 1 : permits) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [this] { return permits_ > 0; });
        --permits_;
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++permits_;
        }
        cv_.notify_one();
    }

private:
    unsigned permits_;
    std::mutex mutex_;
    std::condition_variable cv_;
};

struct RemoteConfig {
    std::string base_url;     // e.g. https://api.openai.com or http://localhost:8080
    std::string model;
    std::string api_key_env;  // name of the environment variable holding the credential
    std::string chat_path = "/v1/chat/completions";
    unsigned max_in_flight = 4;
    int transport_retries = 3;
    std::vector<int> retry_delays_ms = {1000, 2000, 4000};
    int timeout_seconds = 120;

    static RemoteConfig from_json(const json& j) {
        RemoteConfig c;
        c.base_url = j.at("base_url").get<std::string>();
        c.model = j.at("model").get<std::string>();
        c.api_key_env = j.value("api_key_env", "");
        c.chat_path = j.value("chat_path", std::string("/v1/chat/completions"));
        c.max_in_flight = j.value("max_in_flight", 4u);
        c.transport_retries = j.value("transport_retries", 3);
        if (j.contains("retry_delays_ms"))
            c.retry_delays_ms = j.at("retry_delays_ms").get<std::vector<int>>();
        c.timeout_seconds = j.value("timeout_seconds", 120);
        return c;
    }
};

// OpenAI-compatible chat-completions client. Transient failures (429, 5xx,
// socket errors) are retried with the configured backoff; auth rejections are
// surfaced immediately.
class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(RemoteConfig config)
        : config_(std::move(config)), gate_(config_.max_in_flight) {
        if (!config_.api_key_env.empty()) {
            const char* key = std::getenv(config_.api_key_env.c_str());
            if (!key || !*key)
                throw ConfigError("environment variable " + config_.api_key_env
                                  + " is not set (credentials are never read from files)");
            api_key_ = key;
        }
    }

    BackendResponse query(const BackendRequest& request) override {
        gate_.acquire();
        struct Release {
            InFlightGate* g;
            ~Release() { g->release(); }
        } release{&gate_};

        const std::string body = build_body(request);
        int last_status = 0;
        std::string last_excerpt;
        double last_retry_after = 0.0;
        bool rate_limited = false;

        const int attempts = config_.transport_retries + 1;
        for (int attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0) {
                const std::size_t i = static_cast<std::size_t>(attempt - 1);
                int delay = i < config_.retry_delays_ms.size() ? config_.retry_delays_ms[i]
                                                               : config_.retry_delays_ms.back();
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            const auto started = std::chrono::steady_clock::now();
            httplib::Client client(config_.base_url);
            client.set_connection_timeout(config_.timeout_seconds, 0);
            client.set_read_timeout(config_.timeout_seconds, 0);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto result = client.Post(config_.chat_path, headers, body, "application/json");
            const auto elapsed = std::chrono::duration<double, std::milli>(
                                     std::chrono::steady_clock::now() - started)
                                     .count();

            if (!result) {  // no HTTP response at all
                last_status = 0;
                last_excerpt = httplib::to_string(result.error());
                rate_limited = false;
                continue;
            }
            const int status = result->status;
            if (status == 401 || status == 403) throw AuthError(status);
            if (status == 429) {
                rate_limited = true;
                last_status = status;
                last_excerpt = excerpt(result->body);
                last_retry_after = 0.0;
                if (result->has_header("Retry-After"))
                    last_retry_after = std::atof(result->get_header_value("Retry-After").c_str());
                continue;
            }
            if (status >= 500) {
                rate_limited = false;
                last_status = status;
                last_excerpt = excerpt(result->body);
                continue;
            }
            if (status != 200) throw TransportError(status, excerpt(result->body));
            return parse_response(result->body, elapsed);
        }
        if (rate_limited) throw RateLimited(last_retry_after);
        throw TransportError(last_status, last_excerpt);
    }

    std::string describe() const override {
        return "remote(" + config_.base_url + ", model=" + config_.model + ")";
    }

private:
    std::string build_body(const BackendRequest& request) const {
        json messages = json::array();
        for (const auto& m : request.messages)
            messages.push_back(json{{"role", role_name(m.role)}, {"content", m.text}});
        return json{{"model", config_.model},
                    {"messages", messages},
                    {"temperature", request.temperature},
                    {"max_tokens", request.max_tokens}}
            .dump();
    }

    static BackendResponse parse_response(const std::string& body, double latency_ms) {
        BackendResponse resp;
        resp.latency_ms = latency_ms;
        try {
            const json j = json::parse(body);
            const auto& choice = j.at("choices").at(0);
            resp.text = choice.at("message").at("content").is_null()
                            ? ""
                            : choice.at("message").at("content").get<std::string>();
            const std::string reason = choice.value("finish_reason", "stop");
            resp.finish_reason =
                reason == "length" ? FinishReason::Length : FinishReason::Stop;
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(200, std::string("unexpected response shape: ") + e.what());
        }
        return resp;
    }

    static std::string excerpt(const std::string& body) {
        return body.size() <= 200 ? body : body.substr(0, 200) + "...";
    }

    RemoteConfig config_;
    std::string api_key_;
    InFlightGate gate_;
};

namespace detail {
inline const bool remote_backend_registered = [] {
    remote_backend_factory = +[](const json& spec) -> std::unique_ptr<Backend> {
        return std::make_unique<RemoteBackend>(RemoteConfig::from_json(spec));
    };
    return true;
}();
}  // namespace detail

}  // namespace moralprobe
