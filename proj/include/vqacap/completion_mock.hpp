#pragma once

#include <random>
#include <string>
#include <vector>

#include "vqacap/completion.hpp"
#include "vqacap/digest.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::completion {

// One entry of the mock's lookup table. Suffix matchers anchor at the end of
// the prompt (prompts end with the test block, so that is where fixtures
// discriminate); full matchers require byte equality.
struct MockRule {
    enum class Match { suffix, full };
    // How multi-sample requests pick from `responses`: cycle walks the list
    // in order (i mod size), draw uses a per-prompt seeded RNG.
    enum class Sampling { cycle, draw };

    Match match = Match::suffix;
    std::string pattern;
    std::vector<std::string> responses;
    Sampling sampling = Sampling::cycle;

    bool matches(const std::string& prompt) const {
        if (match == Match::full) return prompt == pattern;
        return prompt.size() >= pattern.size() && prompt.ends_with(pattern);
    }
};

// Deterministic stand-in for the completion endpoint. First matching rule
// wins; unmatched prompts get `default_answer`. Responses depend only on
// (table, prompt, request), never on call order, so concurrent pipelines
// stay bit-reproducible at any worker count.
class MockCompletionService : public CompletionService {
  public:
    explicit MockCompletionService(std::vector<MockRule> rules, std::string default_answer = "unknown",
                                   std::uint64_t seed = 0)
        : rules_(std::move(rules)), default_answer_(std::move(default_answer)), seed_(seed) {
        for (const auto& rule : rules_) {
            if (rule.responses.empty()) throw Error("mock: rule with empty response list");
        }
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        request.validate();
        CompletionResponse resp;
        const MockRule* rule = nullptr;
        for (const auto& r : rules_) {
            if (r.matches(request.prompt)) {
                rule = &r;
                break;
            }
        }
        if (rule == nullptr) {
            resp.choices.assign(static_cast<std::size_t>(request.num_samples), default_answer_);
        } else if (request.temperature == 0.0) {
            resp.choices.push_back(rule->responses.front());
        } else if (rule->sampling == MockRule::Sampling::cycle) {
            for (int i = 0; i < request.num_samples; ++i)
                resp.choices.push_back(rule->responses[static_cast<std::size_t>(i) % rule->responses.size()]);
        } else {
            // Seed from (table seed, prompt) so draws are reproducible per
            // prompt and independent of scheduling.
            const std::uint64_t h = fnv1a64(request.prompt);
            std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                              static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
            std::mt19937_64 rng(seq);
            for (int i = 0; i < request.num_samples; ++i)
                resp.choices.push_back(rule->responses[rng() % rule->responses.size()]);
        }
        resp.usage.prompt_tokens = static_cast<long long>(request.prompt.size() / 4 + 1);
        for (const auto& c : resp.choices) resp.usage.completion_tokens += static_cast<long long>(c.size() / 4 + 1);
        return resp;
    }

  private:
    std::vector<MockRule> rules_;
    std::string default_answer_;
    std::uint64_t seed_;
};

// Table file:
//   {"default": "unknown", "seed": 0,
//    "rules": [{"match": "suffix"|"full", "pattern": "...",
//               "responses": ["..."], "sampling": "cycle"|"draw"}]}
inline MockCompletionService mock_from_file(const std::filesystem::path& path) {
    const json doc = load_json_file(path);
    std::vector<MockRule> rules;
    if (doc.contains("rules")) {
        for (const auto& r : doc.at("rules")) {
            MockRule rule;
            if (r.contains("match")) {
                const auto m = r.at("match").get<std::string>();
                if (m == "suffix") {
                    rule.match = MockRule::Match::suffix;
                } else if (m == "full") {
                    rule.match = MockRule::Match::full;
                } else {
                    throw ParseError(path.string() + ": unknown matcher kind '" + m + "'");
                }
            }
            rule.pattern = r.at("pattern").get<std::string>();
            rule.responses = r.at("responses").get<std::vector<std::string>>();
            if (r.contains("sampling")) {
                const auto s = r.at("sampling").get<std::string>();
                if (s == "cycle") {
                    rule.sampling = MockRule::Sampling::cycle;
                } else if (s == "draw") {
                    rule.sampling = MockRule::Sampling::draw;
                } else {
                    throw ParseError(path.string() + ": unknown sampling mode '" + s + "'");
                }
            }
            rules.push_back(std::move(rule));
        }
    }
    std::string default_answer = doc.value("default", std::string("unknown"));
    std::uint64_t seed = doc.value("seed", std::uint64_t{0});
    return MockCompletionService(std::move(rules), std::move(default_answer), seed);
}

}  // namespace vqacap::completion
