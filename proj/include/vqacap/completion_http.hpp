#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

#include "vqacap/completion.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"
#include "vqacap/log.hpp"

namespace vqacap::completion {

// OpenAI-style completions endpoint:
//   POST {base}/completions
//   {model, prompt, max_tokens, temperature, n, stop} -> {choices:[{text}], usage}
// Base URL and credentials come from LLM_BASE_URL / LLM_API_KEY.
class HttpCompletionService : public CompletionService {
  public:
    HttpCompletionService(const std::string& base_url, std::string api_key)
        : api_key_(std::move(api_key)) {
        // Split "scheme://host[:port][/path]" into client origin and path prefix.
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos)
            throw Error("LLM base URL must include a scheme: " + base_url);
        const auto path_start = base_url.find('/', scheme_end + 3);
        std::string origin = path_start == std::string::npos ? base_url : base_url.substr(0, path_start);
        if (path_start != std::string::npos) path_prefix_ = base_url.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        client_ = std::make_unique<httplib::Client>(origin);
        client_->set_connection_timeout(10);
        client_->set_read_timeout(120);
    }

    static std::unique_ptr<HttpCompletionService> from_env() {
        const char* base = std::getenv("LLM_BASE_URL");
        if (base == nullptr || *base == '\0')
            throw Error("LLM_BASE_URL is not set; pass --mock for offline runs");
        const char* key = std::getenv("LLM_API_KEY");
        return std::make_unique<HttpCompletionService>(base, key ? key : "");
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        request.validate();
        json body{{"model", request.model},
                  {"prompt", request.prompt},
                  {"max_tokens", request.max_tokens},
                  {"temperature", request.temperature},
                  {"n", request.num_samples}};
        if (!request.stop.empty()) body["stop"] = request.stop;

        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto result = client_->Post(path_prefix_ + "/completions", headers, body.dump(), "application/json");
        if (!result)
            throw RetryableError("completions: transport error: " + httplib::to_string(result.error()));
        if (result->status == 401 || result->status == 403)
            throw FatalServiceError("completions: rejected with status " + std::to_string(result->status) +
                                    ": " + result->body);
        if (result->status == 429 || result->status >= 500)
            throw RetryableError("completions: status " + std::to_string(result->status) + ": " + result->body);
        if (result->status < 200 || result->status >= 300)
            throw FatalServiceError("completions: status " + std::to_string(result->status) + ": " + result->body);

        json parsed;
        try {
            parsed = json::parse(result->body);
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("completions: unparseable response body: ") + e.what());
        }
        CompletionResponse resp;
        try {
            for (const auto& choice : parsed.at("choices")) resp.choices.push_back(choice.at("text").get<std::string>());
            if (parsed.contains("usage")) {
                resp.usage.prompt_tokens = parsed["usage"].value("prompt_tokens", 0LL);
                resp.usage.completion_tokens = parsed["usage"].value("completion_tokens", 0LL);
            }
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("completions: malformed response fields: ") + e.what());
        }
        return resp;
    }

  private:
    std::unique_ptr<httplib::Client> client_;
    std::string api_key_;
    std::string path_prefix_;
};

}  // namespace vqacap::completion
