#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "dcg/errors.hpp"
#include "dcg/gateway.hpp"

namespace dcg {

/// Remote completion client speaking the gateway wire format:
/// request  {model, messages:[{role, text, image_refs}], temperature, max_tokens}
/// response {text}
/// Transient transport failures (connection errors, 5xx, 429) are retried up
/// to the endpoint's retry count.
class HttpClient : public CompletionClient {
public:
    explicit HttpClient(ModelEndpoint endpoint, RequestLog* log = nullptr)
        : endpoint_(std::move(endpoint)), log_(log) {
        const std::string prefix = "http://";
        if (endpoint_.url.rfind(prefix, 0) != 0) {
            throw ConfigError("endpoint url must start with http:// (got '" + endpoint_.url + "')");
        }
        const std::string rest = endpoint_.url.substr(prefix.size());
        const auto slash = rest.find('/');
        host_ = prefix + (slash == std::string::npos ? rest : rest.substr(0, slash));
        path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    }

    ModelResponse complete(const CompletionRequest& request) override {
        nlohmann::json payload{{"model", endpoint_.model_id},
                               {"messages",
                                nlohmann::json::array({nlohmann::json{{"role", "user"},
                                                                      {"text", request.prompt},
                                                                      {"image_refs", request.images}}})},
                               {"temperature", request.temperature},
                               {"max_tokens", request.max_tokens}};
        const std::string body = payload.dump();

        httplib::Client client(host_);
        client.set_connection_timeout(endpoint_.timeout_s, 0);
        client.set_read_timeout(endpoint_.timeout_s, 0);
        httplib::Headers headers;
        if (!endpoint_.auth_env.empty()) {
            const char* key = std::getenv(endpoint_.auth_env.c_str());
            if (!key || !*key) {
                fail(request, AuthError("env var '" + endpoint_.auth_env + "' is not set"));
            }
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        std::string last_failure = "unreachable";
        bool rate_limited = false;
        for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
            auto result = client.Post(path_, headers, body, "application/json");
            if (!result) {
                last_failure = httplib::to_string(result.error());
                rate_limited = false;
                continue;
            }
            if (result->status == 401 || result->status == 403) {
                fail(request, AuthError("endpoint returned status " + std::to_string(result->status)));
            }
            if (result->status == 429) {
                last_failure = "status 429";
                rate_limited = true;
                continue;
            }
            if (result->status >= 500) {
                last_failure = "status " + std::to_string(result->status);
                rate_limited = false;
                continue;
            }
            if (result->status != 200) {
                fail(request, MalformedResponseError("unexpected status " + std::to_string(result->status)));
            }
            try {
                nlohmann::json j = nlohmann::json::parse(result->body);
                if (!j.contains("text") || !j.at("text").is_string()) {
                    fail(request, MalformedResponseError("response JSON has no 'text' field"));
                }
                ModelResponse response{j.at("text").get<std::string>()};
                if (log_) log_->record(request, response.text, true);
                return response;
            } catch (const nlohmann::json::exception& e) {
                fail(request, MalformedResponseError(std::string("response is not JSON: ") + e.what()));
            }
        }
        if (rate_limited) {
            fail(request, RateLimitedError("still rate limited after " + std::to_string(endpoint_.retries) +
                                           " retries"));
        }
        fail(request, TimeoutError("endpoint unreachable after " + std::to_string(endpoint_.retries) +
                                   " retries: " + last_failure));
        return {};  // unreachable
    }

    const std::string& model_id() const override { return endpoint_.model_id; }

private:
    template <typename ErrorType>
    [[noreturn]] void fail(const CompletionRequest& request, const ErrorType& error) {
        if (log_) log_->record(request, error.what(), false);
        throw error;
    }

    ModelEndpoint endpoint_;
    std::string host_;  // scheme://host:port
    std::string path_;
    RequestLog* log_ = nullptr;
};

}  // namespace dcg
