#pragma once

#include <string>
#include <vector>

#include "vqacap/digest.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::completion {

struct CompletionRequest {
    std::string model = "code-davinci-002";
    std::string prompt;
    int max_tokens = 10;
    double temperature = 0.0;
    int num_samples = 1;
    std::vector<std::string> stop;

    void validate() const {
        if (model.empty()) throw Error("CompletionRequest: model must be set");
        if (max_tokens <= 0) throw Error("CompletionRequest: max_tokens must be positive");
        if (temperature < 0.0) throw Error("CompletionRequest: temperature must be >= 0");
        if (num_samples <= 0) throw Error("CompletionRequest: num_samples must be positive");
        if (temperature == 0.0 && num_samples != 1)
            throw Error("CompletionRequest: greedy decoding (temperature 0) requires num_samples == 1");
    }

    // Content-addressed identity: any field change changes the digest.
    // nlohmann::json serializes object keys sorted, so the dump is canonical.
    std::string cache_key() const {
        const json j{{"model", model},
                     {"prompt", prompt},
                     {"max_tokens", max_tokens},
                     {"temperature", temperature},
                     {"num_samples", num_samples},
                     {"stop", stop}};
        return sha256_hex(j.dump());
    }
};

struct TokenUsage {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
};

struct CompletionResponse {
    std::vector<std::string> choices;
    TokenUsage usage;
    bool cached = false;  // served from cache / coalesced, not serialized

    json to_json() const {
        return json{{"choices", choices},
                    {"usage", {{"prompt_tokens", usage.prompt_tokens},
                               {"completion_tokens", usage.completion_tokens}}}};
    }

    static CompletionResponse from_json(const json& j) {
        CompletionResponse resp;
        resp.choices = j.at("choices").get<std::vector<std::string>>();
        if (j.contains("usage")) {
            const auto& u = j.at("usage");
            if (u.contains("prompt_tokens")) resp.usage.prompt_tokens = u.at("prompt_tokens").get<long long>();
            if (u.contains("completion_tokens"))
                resp.usage.completion_tokens = u.at("completion_tokens").get<long long>();
        }
        return resp;
    }
};

class CompletionService {
  public:
    virtual ~CompletionService() = default;
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
};

// Cuts `text` at the earliest occurrence of any stop string. Empty stop
// strings are ignored.
inline std::string trim_at_stop(std::string text, const std::vector<std::string>& stop) {
    std::size_t cut = std::string::npos;
    for (const auto& s : stop) {
        if (s.empty()) continue;
        const std::size_t pos = text.find(s);
        if (pos < cut) cut = pos;
    }
    if (cut != std::string::npos) text.resize(cut);
    return text;
}

}  // namespace vqacap::completion
