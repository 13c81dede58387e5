#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vqacap/caption_metrics.hpp"
#include "vqacap/completion.hpp"
#include "vqacap/corpus.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"
#include "vqacap/log.hpp"
#include "vqacap/metrics.hpp"
#include "vqacap/parallel.hpp"
#include "vqacap/prompts.hpp"

namespace vqacap::synthesis {

// One sampled caption for a record. soft_accuracy / cider stay at -1 until
// the filter fills them; qa_answer is the filter's decoded answer.
struct CandidateCaption {
    std::string record_id;
    int candidate_index = 0;
    std::string text;
    double soft_accuracy = -1.0;
    double cider = -1.0;
    std::string qa_answer;

    json to_json() const {
        json j{{"record_id", record_id}, {"candidate_index", candidate_index}, {"text", text}};
        if (soft_accuracy >= 0.0) j["soft_accuracy"] = soft_accuracy;
        if (cider >= 0.0) j["cider"] = cider;
        if (!qa_answer.empty()) j["qa_answer"] = qa_answer;
        return j;
    }

    static CandidateCaption from_json(const json& j) {
        CandidateCaption c;
        c.record_id = j.at("record_id").get<std::string>();
        c.candidate_index = j.at("candidate_index").get<int>();
        c.text = j.at("text").get<std::string>();
        c.soft_accuracy = j.value("soft_accuracy", -1.0);
        c.cider = j.value("cider", -1.0);
        c.qa_answer = j.value("qa_answer", std::string());
        return c;
    }
};

// One line of the captioner-training file: the captioner prompt, the image,
// and the selected caption, plus enough provenance to audit the selection.
struct TrainingRecord {
    std::string record_id;
    std::string prompt;
    corpus::ImageRef image;
    std::string caption;
    int candidate_index = 0;
    double soft_accuracy = 0.0;
    double cider = -1.0;

    json to_json() const {
        json prov{{"record_id", record_id},
                  {"candidate_index", candidate_index},
                  {"soft_accuracy", soft_accuracy}};
        if (cider >= 0.0) prov["cider"] = cider;
        return json{{"prompt", prompt},
                    {"image_id", image.image_id},
                    {"split", std::string(corpus::to_string(image.split))},
                    {"caption", caption},
                    {"provenance", prov}};
    }

    static TrainingRecord from_json(const json& j) {
        TrainingRecord rec;
        rec.prompt = j.at("prompt").get<std::string>();
        rec.image.image_id = j.at("image_id").get<std::string>();
        rec.image.split = corpus::split_from_string(j.at("split").get<std::string>());
        rec.caption = j.at("caption").get<std::string>();
        const auto& prov = j.at("provenance");
        rec.record_id = prov.at("record_id").get<std::string>();
        rec.candidate_index = prov.at("candidate_index").get<int>();
        rec.soft_accuracy = prov.at("soft_accuracy").get<double>();
        rec.cider = prov.value("cider", -1.0);
        return rec;
    }
};

namespace detail {

inline std::string trim_ws(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Candidate generation
// ---------------------------------------------------------------------------

struct GenerateConfig {
    std::vector<prompts::SynthesisExample> seed_examples;
    prompts::PromptTemplates templates;
    std::string model = "code-davinci-002";
    int k = 5;                   // candidates sampled per record
    double temperature = 1.0;    // sampling; the filter QA side is greedy
    int max_tokens = 60;
    int expected_examples = -1;  // -1: accept any seed-example count
};

// Samples k captions for one record via the summarization prompt. Outputs
// are whitespace-trimmed, empties dropped, exact duplicates collapsed onto
// the lowest sample index (so tie-breaks later follow generation order).
inline std::vector<CandidateCaption> generate_candidates(const corpus::VqaRecord& record,
                                                         const GenerateConfig& config,
                                                         completion::CompletionService& service) {
    if (!record.reference_captions)
        throw Error("generate_candidates: record " + record.record_id + " has no reference captions");
    if (config.k < 1) throw Error("generate_candidates: k must be >= 1");

    prompts::SynthesisTarget target;
    target.contexts = prompts::join_captions(record.reference_captions->captions);
    target.question = record.question;
    target.answer = corpus::modal_answer(record);

    completion::CompletionRequest request;
    request.model = config.model;
    request.prompt =
        prompts::render_synthesis_prompt(config.seed_examples, target, config.templates, config.expected_examples)
            .rendered;
    request.max_tokens = config.max_tokens;
    request.temperature = config.temperature;
    request.num_samples = config.k;
    request.stop = {"\n"};

    const auto response = service.complete(request);

    std::vector<CandidateCaption> candidates;
    for (std::size_t i = 0; i < response.choices.size(); ++i) {
        std::string text = detail::trim_ws(response.choices[i]);
        if (text.empty()) continue;
        const bool duplicate = std::any_of(candidates.begin(), candidates.end(),
                                           [&](const CandidateCaption& c) { return c.text == text; });
        if (duplicate) continue;
        CandidateCaption c;
        c.record_id = record.record_id;
        c.candidate_index = static_cast<int>(i);
        c.text = std::move(text);
        candidates.push_back(std::move(c));
    }
    return candidates;
}

// ---------------------------------------------------------------------------
// Candidate filtering
// ---------------------------------------------------------------------------

struct FilterConfig {
    std::vector<prompts::IclExample> examples;  // QA demonstrations
    prompts::PromptTemplates templates;
    std::string model = "code-davinci-002";
    int max_tokens = 10;
    std::vector<std::string> stop = {"\n", "==="};
    double tie_tolerance = 1e-9;
};

// Builds the filter's QA demonstration pool from the synthesis seed
// examples: each seed's summary doubles as the context. `count` examples are
// picked by a seeded shuffle so runs are reproducible.
inline std::vector<prompts::IclExample> filter_pool_from_seed(
    const std::vector<prompts::SynthesisExample>& seed, std::size_t count, std::uint64_t rng_seed = 0) {
    std::vector<std::size_t> order(seed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    if (count > order.size()) count = order.size();
    std::vector<prompts::IclExample> pool;
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& s = seed[order[i]];
        pool.push_back({s.summary, s.question, s.answer});
    }
    return pool;
}

struct FilterResult {
    std::vector<CandidateCaption> scored;  // all candidates, scores filled
    std::size_t winner = 0;                // index into scored

    const CandidateCaption& selected() const { return scored.at(winner); }
};

// Scores every candidate by asking the QA service to answer the record's
// question from the candidate alone, then selects: highest soft accuracy;
// within tie_tolerance of the top, highest CIDEr against the record's
// reference captions; then lowest candidate_index. Candidates are re-sorted
// by candidate_index first, so arrival order cannot change the outcome.
inline FilterResult filter_candidates(const corpus::VqaRecord& record,
                                      std::vector<CandidateCaption> candidates, const FilterConfig& config,
                                      const caption_metrics::CiderScorer& cider_scorer,
                                      completion::CompletionService& service) {
    if (candidates.empty()) throw Error("filter_candidates: record " + record.record_id + " has no candidates");

    std::sort(candidates.begin(), candidates.end(),
              [](const CandidateCaption& a, const CandidateCaption& b) {
                  return a.candidate_index < b.candidate_index;
              });

    for (auto& candidate : candidates) {
        completion::CompletionRequest request;
        request.model = config.model;
        request.prompt =
            prompts::render_icl_prompt(config.examples, candidate.text, record.question, config.templates).rendered;
        request.max_tokens = config.max_tokens;
        request.temperature = 0.0;
        request.num_samples = 1;
        request.stop = config.stop;
        try {
            const auto response = service.complete(request);
            candidate.qa_answer = detail::trim_ws(response.choices.front());
            candidate.soft_accuracy = metrics::soft_vqa_accuracy(candidate.qa_answer, record.answers);
        } catch (const ServiceError& e) {
            log::warn("filter: QA failed for record " + record.record_id + " candidate " +
                      std::to_string(candidate.candidate_index) + ": " + e.what());
            candidate.qa_answer.clear();
            candidate.soft_accuracy = 0.0;
        }
    }

    double best = 0.0;
    for (const auto& c : candidates) best = std::max(best, c.soft_accuracy);

    std::vector<std::size_t> tied;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].soft_accuracy >= best - config.tie_tolerance) tied.push_back(i);
    }

    std::size_t winner = tied.front();
    if (tied.size() > 1) {
        if (!record.reference_captions)
            throw Error("filter_candidates: record " + record.record_id +
                        " needs reference captions for the CIDEr tie-break");
        // CIDEr only for the tied subset; everyone else keeps cider = -1.
        for (std::size_t i : tied) {
            candidates[i].cider =
                cider_scorer.score(candidates[i].text, record.reference_captions->captions);
        }
        for (std::size_t i : tied) {
            if (candidates[i].cider > candidates[winner].cider) winner = i;
        }
    } else if (record.reference_captions) {
        candidates[winner].cider =
            cider_scorer.score(candidates[winner].text, record.reference_captions->captions);
    }

    return FilterResult{std::move(candidates), winner};
}

// ---------------------------------------------------------------------------
// Whole-corpus pipeline
// ---------------------------------------------------------------------------

struct SynthesisConfig {
    GenerateConfig generate;
    FilterConfig filter;
    std::size_t workers = 1;
};

struct SynthesisSummary {
    std::size_t synthesized = 0;
    std::size_t skipped = 0;  // no reference captions or no usable candidates
    std::size_t failed = 0;   // service gave up on the record
};

struct SynthesisOutput {
    std::vector<TrainingRecord> records;
    SynthesisSummary summary;
};

// idf corpus for tie-break CIDEr: every reference caption in the run, keyed
// by image so repeated images are counted once.
inline std::map<std::string, std::vector<std::string>> reference_caption_corpus(
    const std::vector<corpus::VqaRecord>& records) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& rec : records) {
        if (rec.reference_captions) out[rec.image.image_id] = rec.reference_captions->captions;
    }
    return out;
}

// generate -> filter -> TrainingRecord for a whole corpus, fanned out over a
// worker pool. Results come back in record_id order regardless of worker
// count (the input is required to be sorted, and outputs keep input order).
inline SynthesisOutput synthesize_dataset(const std::vector<corpus::VqaRecord>& records,
                                          const SynthesisConfig& config,
                                          completion::CompletionService& service) {
    const caption_metrics::CiderScorer cider_scorer(reference_caption_corpus(records));

    enum class Outcome { ok, skipped, failed };
    struct PerRecord {
        Outcome outcome = Outcome::skipped;
        TrainingRecord record;
    };

    auto process = [&](const corpus::VqaRecord& rec) -> PerRecord {
        PerRecord out;
        if (!rec.reference_captions) {
            log::warn("synthesize: record " + rec.record_id + " has no reference captions, skipped");
            return out;
        }
        std::vector<CandidateCaption> candidates;
        try {
            candidates = generate_candidates(rec, config.generate, service);
        } catch (const ServiceError& e) {
            log::error("synthesize: record " + rec.record_id + " failed: " + e.what());
            out.outcome = Outcome::failed;
            return out;
        }
        if (candidates.empty()) {
            log::warn("synthesize: record " + rec.record_id + " produced no usable candidates, skipped");
            return out;
        }
        const auto filtered = filter_candidates(rec, std::move(candidates), config.filter, cider_scorer, service);
        const auto& sel = filtered.selected();
        out.outcome = Outcome::ok;
        out.record.record_id = rec.record_id;
        out.record.prompt =
            prompts::render_captioner_prompt(rec.question, rec.ocr_tokens, config.generate.templates).rendered;
        out.record.image = rec.image;
        out.record.caption = sel.text;
        out.record.candidate_index = sel.candidate_index;
        out.record.soft_accuracy = sel.soft_accuracy;
        out.record.cider = sel.cider;
        return out;
    };

    const auto processed = parallel_map(records, config.workers, process);

    SynthesisOutput output;
    for (const auto& p : processed) {
        switch (p.outcome) {
            case Outcome::ok:
                output.records.push_back(p.record);
                ++output.summary.synthesized;
                break;
            case Outcome::skipped: ++output.summary.skipped; break;
            case Outcome::failed: ++output.summary.failed; break;
        }
    }
    log::info("synthesize: " + std::to_string(output.summary.synthesized) + " synthesized, " +
              std::to_string(output.summary.skipped) + " skipped, " + std::to_string(output.summary.failed) +
              " failed");
    return output;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

inline void save_candidates(const std::vector<CandidateCaption>& candidates,
                            const std::filesystem::path& path) {
    JsonlWriter writer(path);
    for (const auto& c : candidates) writer.write(c.to_json());
    writer.close();
}

// Candidates grouped by record, records and candidates both in sorted order.
inline std::map<std::string, std::vector<CandidateCaption>> load_candidates(
    const std::filesystem::path& path) {
    std::map<std::string, std::vector<CandidateCaption>> out;
    for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
        try {
            auto c = CandidateCaption::from_json(j);
            out[c.record_id].push_back(std::move(c));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    for (auto& [id, list] : out) {
        std::sort(list.begin(), list.end(), [](const CandidateCaption& a, const CandidateCaption& b) {
            return a.candidate_index < b.candidate_index;
        });
    }
    return out;
}

inline void export_training_file(std::vector<TrainingRecord> records, const std::filesystem::path& path) {
    if (records.empty()) throw Error("export_training_file: nothing to export");
    std::sort(records.begin(), records.end(),
              [](const TrainingRecord& a, const TrainingRecord& b) { return a.record_id < b.record_id; });
    JsonlWriter writer(path);
    for (const auto& rec : records) writer.write(rec.to_json());
    writer.close();
}

inline std::vector<TrainingRecord> load_training_file(const std::filesystem::path& path) {
    std::vector<TrainingRecord> records;
    for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
        try {
            records.push_back(TrainingRecord::from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    return records;
}

}  // namespace vqacap::synthesis
