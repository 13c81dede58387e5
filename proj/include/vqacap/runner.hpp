#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqacap/completion.hpp"
#include "vqacap/corpus.hpp"
#include "vqacap/digest.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"
#include "vqacap/log.hpp"
#include "vqacap/metrics.hpp"
#include "vqacap/parallel.hpp"
#include "vqacap/prompts.hpp"
#include "vqacap/retrieval.hpp"

namespace vqacap::runner {

enum class Task { okvqa, aokvqa_da, aokvqa_mc, vqav2, textvqa, webqa };
enum class Strategy { retrieved, random_sample };

inline std::string_view to_string(Task t) {
    switch (t) {
        case Task::okvqa: return "okvqa";
        case Task::aokvqa_da: return "aokvqa_da";
        case Task::aokvqa_mc: return "aokvqa_mc";
        case Task::vqav2: return "vqav2";
        case Task::textvqa: return "textvqa";
        case Task::webqa: return "webqa";
    }
    return "okvqa";
}

inline Task task_from_string(std::string_view s) {
    for (Task t : {Task::okvqa, Task::aokvqa_da, Task::aokvqa_mc, Task::vqav2, Task::textvqa, Task::webqa}) {
        if (s == to_string(t)) return t;
    }
    throw ParseError("unknown task: " + std::string(s));
}

inline std::string_view to_string(Strategy s) {
    return s == Strategy::retrieved ? "retrieved" : "random";
}

inline Strategy strategy_from_string(std::string_view s) {
    if (s == "retrieved") return Strategy::retrieved;
    if (s == "random") return Strategy::random_sample;
    throw ParseError("unknown strategy: " + std::string(s));
}

// Per-task scoring rule.
inline metrics::MetricName task_metric(Task t) {
    switch (t) {
        case Task::aokvqa_mc: return metrics::MetricName::multiple_choice_accuracy;
        case Task::webqa: return metrics::MetricName::keyword_accuracy;
        default: return metrics::MetricName::standard_vqa_accuracy;
    }
}

struct RunConfig {
    Task task = Task::okvqa;
    Strategy strategy = Strategy::retrieved;
    int n_examples = -1;  // -1: task default
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string instruction;  // empty: template default
    std::string model = "code-davinci-002";
    int max_tokens = -1;  // -1: task default
    prompts::PromptTemplates templates;
    std::size_t workers = 1;

    // Direct-answer tasks default to 32 prompt examples; webqa uses 8.
    int resolved_n_examples() const {
        if (n_examples >= 0) return n_examples;
        return task == Task::webqa ? 8 : 32;
    }

    int resolved_max_tokens() const {
        if (max_tokens > 0) return max_tokens;
        return task == Task::webqa ? 120 : 10;
    }

    // WebQA answers are long-form: keep newlines, only the block separator
    // terminates the completion.
    std::vector<std::string> stop_strings() const {
        if (task == Task::webqa) return {"==="};
        return {"\n", "==="};
    }
};

struct Prediction {
    std::string record_id;
    std::string answer;
    std::string prompt_digest;
    std::vector<std::string> examples_used;

    json to_json() const {
        return json{{"record_id", record_id},
                    {"answer", answer},
                    {"prompt_digest", prompt_digest},
                    {"examples_used", examples_used}};
    }

    static Prediction from_json(const json& j) {
        Prediction p;
        p.record_id = j.at("record_id").get<std::string>();
        p.answer = j.at("answer").get<std::string>();
        p.prompt_digest = j.value("prompt_digest", std::string());
        if (j.contains("examples_used"))
            p.examples_used = j.at("examples_used").get<std::vector<std::string>>();
        return p;
    }
};

inline void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
    JsonlWriter writer(path);
    for (const auto& p : predictions) writer.write(p.to_json());
    writer.close();
}

inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::vector<Prediction> out;
    for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
        try {
            out.push_back(Prediction::from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Caption sources
// ---------------------------------------------------------------------------

class CaptionSource {
  public:
    virtual ~CaptionSource() = default;
    virtual std::string caption_for(const corpus::VqaRecord& record) = 0;
    // record_ids this source cannot caption; empty for generative sources.
    virtual std::vector<std::string> missing(const std::vector<corpus::VqaRecord>& records) {
        (void)records;
        return {};
    }
};

// Captions from files of {record_id|image_id, caption} lines. record_id
// entries take precedence over image_id entries.
class FileCaptionSource : public CaptionSource {
  public:
    FileCaptionSource() = default;

    explicit FileCaptionSource(const std::filesystem::path& path) { add_file(path); }

    void add_file(const std::filesystem::path& path) {
        for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
            if (!j.contains("caption"))
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing 'caption'");
            const std::string caption = j.at("caption").get<std::string>();
            if (j.contains("record_id"))
                by_record_[j.at("record_id").get<std::string>()] = caption;
            else if (j.contains("image_id"))
                by_image_[j.at("image_id").get<std::string>()] = caption;
            else
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": need 'record_id' or 'image_id'");
        });
    }

    void add(const std::string& record_id, const std::string& caption) { by_record_[record_id] = caption; }

    std::string caption_for(const corpus::VqaRecord& record) override {
        auto it = by_record_.find(record.record_id);
        if (it != by_record_.end()) return it->second;
        it = by_image_.find(record.image.image_id);
        if (it != by_image_.end()) return it->second;
        throw CoverageError("captions: no caption for record " + record.record_id);
    }

    std::vector<std::string> missing(const std::vector<corpus::VqaRecord>& records) override {
        std::vector<std::string> out;
        for (const auto& rec : records) {
            if (by_record_.count(rec.record_id) == 0 && by_image_.count(rec.image.image_id) == 0)
                out.push_back(rec.record_id);
        }
        return out;
    }

  private:
    std::unordered_map<std::string, std::string> by_record_;
    std::unordered_map<std::string, std::string> by_image_;
};

// Captions produced on the fly by a captioner served behind the completions
// API: prompt in, caption out, greedy.
class ServiceCaptionSource : public CaptionSource {
  public:
    ServiceCaptionSource(completion::CompletionService& service, std::string model,
                         prompts::PromptTemplates templates = {}, int max_tokens = 60)
        : service_(service), model_(std::move(model)), templates_(std::move(templates)), max_tokens_(max_tokens) {}

    std::string caption_for(const corpus::VqaRecord& record) override {
        completion::CompletionRequest request;
        request.model = model_;
        request.prompt = prompts::render_captioner_prompt(record.question, record.ocr_tokens, templates_).rendered;
        request.max_tokens = max_tokens_;
        request.temperature = 0.0;
        request.num_samples = 1;
        request.stop = {"\n"};
        const auto response = service_.complete(request);
        std::string caption = response.choices.front();
        const auto b = caption.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = caption.find_last_not_of(" \t\r\n");
        return caption.substr(b, e - b + 1);
    }

  private:
    completion::CompletionService& service_;
    std::string model_;
    prompts::PromptTemplates templates_;
    int max_tokens_;
};

// ---------------------------------------------------------------------------
// Example pool: demonstration material for the ICL prompt
// ---------------------------------------------------------------------------

struct ExampleEntry {
    std::string record_id;
    std::string context;  // caption shown in the Context: line
    std::string question;
    std::string answer;

    json to_json() const {
        return json{{"record_id", record_id}, {"context", context}, {"question", question}, {"answer", answer}};
    }

    static ExampleEntry from_json(const json& j) {
        return ExampleEntry{j.at("record_id").get<std::string>(), j.at("context").get<std::string>(),
                            j.at("question").get<std::string>(), j.at("answer").get<std::string>()};
    }
};

class ExamplePool {
  public:
    ExamplePool() = default;

    static ExamplePool build(const std::vector<corpus::VqaRecord>& records, CaptionSource& captions) {
        ExamplePool pool;
        for (const auto& rec : records) {
            pool.entries_.push_back(
                {rec.record_id, captions.caption_for(rec), rec.question, corpus::modal_answer(rec)});
        }
        pool.finish();
        return pool;
    }

    static ExamplePool load(const std::filesystem::path& path) {
        ExamplePool pool;
        for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
            try {
                pool.entries_.push_back(ExampleEntry::from_json(j));
            } catch (const json::exception& e) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        });
        pool.finish();
        return pool;
    }

    void save(const std::filesystem::path& path) const {
        JsonlWriter writer(path);
        for (const auto& e : entries_) writer.write(e.to_json());
        writer.close();
    }

    const ExampleEntry& at(const std::string& record_id) const {
        auto it = index_.find(record_id);
        if (it == index_.end()) throw CoverageError("example pool: no entry for record " + record_id);
        return entries_[it->second];
    }

    bool contains(const std::string& record_id) const { return index_.count(record_id) != 0; }
    const std::vector<ExampleEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

  private:
    void finish() {
        std::sort(entries_.begin(), entries_.end(),
                  [](const ExampleEntry& a, const ExampleEntry& b) { return a.record_id < b.record_id; });
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!index_.emplace(entries_[i].record_id, i).second)
                throw Error("example pool: duplicate record_id " + entries_[i].record_id);
        }
    }

    std::vector<ExampleEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Answering
// ---------------------------------------------------------------------------

struct RunContext {
    CaptionSource* captions = nullptr;
    const ExamplePool* examples = nullptr;
    // Covers query records; for retrieved strategy must also cover the
    // example pool (a restricted sub-pool is built per run).
    const retrieval::EmbeddingPool* embeddings = nullptr;
    completion::CompletionService* service = nullptr;
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Uniform sample of `n` entry indices (excluding the test record), seeded by
// (seed, record_id) so results depend on neither thread schedule nor record
// order. Partial Fisher-Yates; sampled order is the prompt order.
inline std::vector<std::size_t> sample_example_indices(const ExamplePool& pool,
                                                       const std::string& test_record_id, std::size_t n,
                                                       std::uint64_t seed) {
    std::vector<std::size_t> indices;
    indices.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool.entries()[i].record_id != test_record_id) indices.push_back(i);
    }
    const std::uint64_t h = fnv1a64(test_record_id);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    if (n > indices.size()) n = indices.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (indices.size() - i));
        std::swap(indices[i], indices[j]);
    }
    indices.resize(n);
    return indices;
}

}  // namespace detail

// Maps an open-ended answer onto the closest of exactly 4 choices by
// character error rate over normalized strings; ties keep the earliest
// choice.
inline std::string nearest_choice(const std::string& answer, const std::vector<std::string>& choices) {
    if (choices.size() != 4)
        throw Error("nearest_choice: expected exactly 4 choices, got " + std::to_string(choices.size()));
    const std::string norm_answer = metrics::normalize_answer(answer);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < choices.size(); ++i) {
        const double score = 1.0 - metrics::char_error_rate(norm_answer, metrics::normalize_answer(choices[i]));
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return choices[best];
}

// One record through the loop: caption, example selection, prompt, greedy
// decode, post-process. `example_embeddings` is the pool restricted to
// example records (nullptr unless strategy is retrieved).
inline Prediction answer_one(const corpus::VqaRecord& record, const RunContext& ctx, const RunConfig& config,
                             std::uint64_t seed,
                             const retrieval::EmbeddingPool* example_embeddings = nullptr) {
    if (ctx.captions == nullptr || ctx.service == nullptr) throw Error("answer_one: incomplete run context");
    const std::string caption = ctx.captions->caption_for(record);
    const std::size_t n = static_cast<std::size_t>(config.resolved_n_examples());

    std::vector<prompts::IclExample> examples;
    std::vector<std::string> example_ids;
    if (n > 0) {
        if (ctx.examples == nullptr || ctx.examples->empty())
            throw Error("answer_one: example pool required for n_examples > 0");
        if (config.strategy == Strategy::retrieved) {
            if (ctx.embeddings == nullptr || example_embeddings == nullptr)
                throw Error("answer_one: retrieved strategy requires embeddings");
            const auto& query = ctx.embeddings->at(record.record_id);
            auto top = retrieval::top_n(query, *example_embeddings, n);
            // top_n is most-similar-first; the prompt wants the most similar
            // example adjacent to the test block, so reverse.
            std::reverse(top.begin(), top.end());
            for (const auto& scored : top) {
                const auto& entry = ctx.examples->at(scored.record_id);
                examples.push_back({entry.context, entry.question, entry.answer});
                example_ids.push_back(entry.record_id);
            }
        } else {
            for (std::size_t i : detail::sample_example_indices(*ctx.examples, record.record_id, n, seed)) {
                const auto& entry = ctx.examples->entries()[i];
                examples.push_back({entry.context, entry.question, entry.answer});
                example_ids.push_back(entry.record_id);
            }
        }
    }

    prompts::PromptTemplates templates = config.templates;
    if (!config.instruction.empty()) templates.icl_instruction = config.instruction;

    completion::CompletionRequest request;
    request.model = config.model;
    request.prompt = prompts::render_icl_prompt(examples, caption, record.question, templates).rendered;
    request.max_tokens = config.resolved_max_tokens();
    request.temperature = 0.0;
    request.num_samples = 1;
    request.stop = config.stop_strings();

    const auto response = ctx.service->complete(request);
    std::string answer = response.choices.front();
    if (config.task != Task::webqa) {
        const auto nl = answer.find('\n');
        if (nl != std::string::npos) answer.resize(nl);
    }
    answer = detail::trim_ws(answer);

    if (config.task == Task::aokvqa_mc) answer = nearest_choice(answer, record.choices);

    Prediction pred;
    pred.record_id = record.record_id;
    pred.answer = answer;
    pred.prompt_digest = request.cache_key();
    pred.examples_used = std::move(example_ids);
    return pred;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

// For multiple choice the first listed answer is the correct choice.
inline const std::string& correct_choice(const corpus::VqaRecord& record) {
    if (record.choices.empty()) throw Error("record " + record.record_id + " has no choices");
    const std::string& truth = record.answers.front();
    if (std::find(record.choices.begin(), record.choices.end(), truth) == record.choices.end())
        log::warn("record " + record.record_id + ": first answer is not among the choices");
    return truth;
}

inline double score_prediction(const Prediction& pred, const corpus::VqaRecord& record,
                               metrics::MetricName metric) {
    switch (metric) {
        case metrics::MetricName::soft_vqa_accuracy:
            return metrics::soft_vqa_accuracy(pred.answer, record.answers);
        case metrics::MetricName::standard_vqa_accuracy:
            return metrics::standard_vqa_accuracy(pred.answer, record.answers);
        case metrics::MetricName::multiple_choice_accuracy:
            return pred.answer == correct_choice(record) ? 1.0 : 0.0;
        case metrics::MetricName::keyword_accuracy:
            return metrics::keyword_accuracy(pred.answer, record.answers);
        default:
            throw Error("metric " + std::string(metrics::to_string(metric)) + " does not score predictions");
    }
}

// Joins predictions with their records and aggregates. Every record needs a
// prediction and vice versa.
inline metrics::MetricReport score_predictions(const std::vector<Prediction>& predictions,
                                               const std::vector<corpus::VqaRecord>& records,
                                               metrics::MetricName metric) {
    std::unordered_map<std::string, const corpus::VqaRecord*> by_id;
    for (const auto& rec : records) by_id.emplace(rec.record_id, &rec);

    std::string missing;
    std::unordered_map<std::string, bool> covered;
    std::vector<metrics::MetricInstance> rows;
    rows.reserve(predictions.size());
    for (const auto& pred : predictions) {
        auto it = by_id.find(pred.record_id);
        if (it == by_id.end()) {
            if (!missing.empty()) missing += ", ";
            missing += pred.record_id;
            continue;
        }
        covered[pred.record_id] = true;
        rows.push_back({pred.record_id, score_prediction(pred, *it->second, metric)});
    }
    if (!missing.empty()) throw CoverageError("evaluate: predictions without records: " + missing);
    for (const auto& rec : records) {
        if (covered.find(rec.record_id) == covered.end()) {
            if (!missing.empty()) missing += ", ";
            missing += rec.record_id;
        }
    }
    if (!missing.empty()) throw CoverageError("evaluate: records without predictions: " + missing);
    return metrics::aggregate(metric, std::move(rows));
}

// ---------------------------------------------------------------------------
// Task runs
// ---------------------------------------------------------------------------

struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<Prediction> predictions;
    metrics::MetricReport report;
};

struct TaskResult {
    metrics::MetricName metric = metrics::MetricName::standard_vqa_accuracy;
    std::vector<SeedRun> runs;
    double mean_aggregate = 0.0;

    json to_json() const {
        json per_seed = json::array();
        for (const auto& run : runs) {
            per_seed.push_back(
                {{"seed", run.seed}, {"aggregate", run.report.aggregate}, {"count", run.report.count}});
        }
        return json{{"metric", std::string(metrics::to_string(metric))},
                    {"runs", per_seed},
                    {"mean_aggregate", mean_aggregate}};
    }
};

// Runs the full loop over `records`. Random strategy runs once per seed and
// also reports the mean of the per-seed aggregates; retrieved is a single
// deterministic pass.
inline TaskResult run_task(std::vector<corpus::VqaRecord> records, const RunContext& ctx,
                           const RunConfig& config) {
    if (records.empty()) throw Error("run_task: empty corpus");
    if (ctx.captions == nullptr || ctx.service == nullptr) throw Error("run_task: incomplete run context");
    std::sort(records.begin(), records.end(),
              [](const corpus::VqaRecord& a, const corpus::VqaRecord& b) { return a.record_id < b.record_id; });

    if (const auto missing = ctx.captions->missing(records); !missing.empty()) {
        std::string ids;
        for (const auto& id : missing) {
            if (!ids.empty()) ids += ", ";
            ids += id;
        }
        throw CoverageError("run_task: caption source does not cover: " + ids);
    }

    // Restrict retrieval to records that can actually serve as examples.
    retrieval::EmbeddingPool example_embeddings;
    if (config.strategy == Strategy::retrieved && config.resolved_n_examples() > 0) {
        if (ctx.embeddings == nullptr) throw Error("run_task: retrieved strategy requires embeddings");
        if (ctx.examples == nullptr || ctx.examples->empty())
            throw Error("run_task: retrieved strategy requires an example pool");
        std::vector<retrieval::EmbeddingRecord> subset;
        for (const auto& entry : ctx.examples->entries()) {
            const auto* emb = ctx.embeddings->find(entry.record_id);
            if (emb == nullptr)
                throw CoverageError("run_task: no embedding for example record " + entry.record_id);
            subset.push_back(*emb);
        }
        example_embeddings = retrieval::EmbeddingPool::from_records(std::move(subset));
    }

    const std::vector<std::uint64_t> seeds =
        config.strategy == Strategy::random_sample ? config.seeds : std::vector<std::uint64_t>{0};
    if (seeds.empty()) throw Error("run_task: random strategy needs at least one seed");

    TaskResult result;
    result.metric = task_metric(config.task);
    for (const std::uint64_t seed : seeds) {
        SeedRun run;
        run.seed = seed;
        run.predictions = parallel_map(records, config.workers, [&](const corpus::VqaRecord& rec) {
            return answer_one(rec, ctx, config, seed,
                              config.strategy == Strategy::retrieved ? &example_embeddings : nullptr);
        });
        run.report = score_predictions(run.predictions, records, result.metric);
        result.runs.push_back(std::move(run));
    }

    double sum = 0.0;
    for (const auto& run : result.runs) sum += run.report.aggregate;
    result.mean_aggregate = sum / static_cast<double>(result.runs.size());
    return result;
}

// ---------------------------------------------------------------------------
// Caption-source comparison
// ---------------------------------------------------------------------------

struct PairedRow {
    std::string record_id;
    double score_a = 0.0;
    double score_b = 0.0;
    double delta = 0.0;
};

struct ComparisonReport {
    metrics::MetricName metric = metrics::MetricName::standard_vqa_accuracy;
    std::vector<PairedRow> rows;
    double aggregate_a = 0.0;
    double aggregate_b = 0.0;
    double delta = 0.0;

    json to_json() const {
        json out{{"metric", std::string(metrics::to_string(metric))},
                 {"aggregate_a", aggregate_a},
                 {"aggregate_b", aggregate_b},
                 {"delta", delta}};
        json rows_json = json::array();
        for (const auto& row : rows) {
            rows_json.push_back({{"record_id", row.record_id},
                                 {"score_a", row.score_a},
                                 {"score_b", row.score_b},
                                 {"delta", row.delta}});
        }
        out["rows"] = rows_json;
        return out;
    }
};

// Same corpus, same config, two caption sources; per-record scores are
// averaged over seeds before pairing.
inline ComparisonReport compare_caption_sources(const std::vector<corpus::VqaRecord>& records,
                                                CaptionSource& source_a, CaptionSource& source_b,
                                                RunContext ctx, const RunConfig& config) {
    auto per_record_means = [&](CaptionSource& source) {
        ctx.captions = &source;
        const TaskResult result = run_task(records, ctx, config);
        std::map<std::string, double> mean;
        for (const auto& run : result.runs) {
            for (const auto& inst : run.report.per_instance) mean[inst.record_id] += inst.score;
        }
        for (auto& [id, score] : mean) score /= static_cast<double>(result.runs.size());
        double aggregate = 0.0;
        for (const auto& run : result.runs) aggregate += run.report.aggregate;
        return std::pair{mean, aggregate / static_cast<double>(result.runs.size())};
    };

    const auto [means_a, agg_a] = per_record_means(source_a);
    const auto [means_b, agg_b] = per_record_means(source_b);

    ComparisonReport report;
    report.metric = task_metric(config.task);
    report.aggregate_a = agg_a;
    report.aggregate_b = agg_b;
    report.delta = agg_a - agg_b;
    for (const auto& [id, a] : means_a) {
        const double b = means_b.at(id);
        report.rows.push_back({id, a, b, a - b});
    }
    return report;
}

}  // namespace vqacap::runner
