// vqacap: data synthesis, filtering, retrieval, and VQA evaluation pipeline.
//
// Subcommands cover the pipeline stages end to end: ingest raw annotation
// files, synthesize candidate captions, filter them with the QA check,
// export the captioner training file, retrieve in-context examples, run the
// VQA task, and score the outputs. All completion traffic goes through one
// gateway (disk cache + retries + throttle); --mock swaps the HTTP backend
// for a deterministic table so whole runs are reproducible offline.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "vqacap/caption_metrics.hpp"
#include "vqacap/completion.hpp"
#include "vqacap/completion_http.hpp"
#include "vqacap/completion_mock.hpp"
#include "vqacap/corpus.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/gateway.hpp"
#include "vqacap/jsonl.hpp"
#include "vqacap/log.hpp"
#include "vqacap/metrics.hpp"
#include "vqacap/parallel.hpp"
#include "vqacap/prompts.hpp"
#include "vqacap/retrieval.hpp"
#include "vqacap/runner.hpp"
#include "vqacap/synthesis.hpp"

namespace {

using vqacap::json;

struct GlobalOpts {
    std::string config_path;
    std::string cache_dir;
    std::string mock_path;
    std::size_t workers = 1;
    std::string log_level = "info";
};

// Everything tunable from --config. Flat struct, JSON file mirrors the
// nesting shown in the README.
struct AppConfig {
    std::string model = "code-davinci-002";
    vqacap::prompts::PromptTemplates templates;
    std::string seed_examples_path;

    int synth_k = 5;
    double synth_temperature = 1.0;
    int synth_max_tokens = 60;
    int expected_seed_examples = -1;  // -1: accept any count

    std::size_t filter_pool_size = 16;
    std::uint64_t filter_pool_seed = 0;
    int filter_max_tokens = 10;
    double tie_tolerance = 1e-9;

    int run_n_examples = -1;   // -1: task default
    int run_max_tokens = -1;   // -1: task default
    std::string instruction;   // empty: template default
    std::vector<std::uint64_t> seeds = {0, 1, 2};

    std::size_t max_in_flight = 4;
    std::size_t requests_per_interval = 0;  // 0: unlimited
    long interval_ms = 1000;
    int max_attempts = 4;
    long backoff_ms = 250;
};

AppConfig load_config(const std::string& path) {
    AppConfig cfg;
    if (path.empty()) return cfg;
    const json j = vqacap::load_json_file(path);
    cfg.model = j.value("model", cfg.model);
    if (j.contains("templates")) cfg.templates = vqacap::prompts::PromptTemplates::from_json(j.at("templates"));
    cfg.seed_examples_path = j.value("seed_examples", cfg.seed_examples_path);
    if (j.contains("synthesis")) {
        const auto& s = j.at("synthesis");
        cfg.synth_k = s.value("k", cfg.synth_k);
        cfg.synth_temperature = s.value("temperature", cfg.synth_temperature);
        cfg.synth_max_tokens = s.value("max_tokens", cfg.synth_max_tokens);
        cfg.expected_seed_examples = s.value("expected_examples", cfg.expected_seed_examples);
    }
    if (j.contains("filter")) {
        const auto& f = j.at("filter");
        cfg.filter_pool_size = f.value("pool_size", cfg.filter_pool_size);
        cfg.filter_pool_seed = f.value("pool_seed", cfg.filter_pool_seed);
        cfg.filter_max_tokens = f.value("max_tokens", cfg.filter_max_tokens);
        cfg.tie_tolerance = f.value("tie_tolerance", cfg.tie_tolerance);
    }
    if (j.contains("run")) {
        const auto& r = j.at("run");
        cfg.run_n_examples = r.value("n_examples", cfg.run_n_examples);
        cfg.run_max_tokens = r.value("max_tokens", cfg.run_max_tokens);
        cfg.instruction = r.value("instruction", cfg.instruction);
        if (r.contains("seeds")) cfg.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("throttle")) {
        const auto& t = j.at("throttle");
        cfg.max_in_flight = t.value("max_in_flight", cfg.max_in_flight);
        cfg.requests_per_interval = t.value("requests_per_interval", cfg.requests_per_interval);
        cfg.interval_ms = t.value("interval_ms", cfg.interval_ms);
    }
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        cfg.max_attempts = r.value("max_attempts", cfg.max_attempts);
        cfg.backoff_ms = r.value("backoff_ms", cfg.backoff_ms);
    }
    return cfg;
}

std::shared_ptr<vqacap::completion::CompletionService> build_service(const GlobalOpts& global,
                                                                     const AppConfig& cfg) {
    namespace cp = vqacap::completion;
    std::shared_ptr<cp::CompletionService> base;
    if (!global.mock_path.empty()) {
        base = std::make_shared<cp::MockCompletionService>(cp::mock_from_file(global.mock_path));
    } else {
        base = cp::HttpCompletionService::from_env();
    }
    cp::ThrottleConfig throttle;
    throttle.max_in_flight = cfg.max_in_flight;
    throttle.requests_per_interval = cfg.requests_per_interval;
    throttle.interval = std::chrono::milliseconds(cfg.interval_ms);
    auto throttled = std::make_shared<cp::ThrottledService>(std::move(base), throttle);
    cp::GatewayOptions gw;
    gw.cache_dir = global.cache_dir;
    gw.max_attempts = cfg.max_attempts;
    gw.retry_backoff = std::chrono::milliseconds(cfg.backoff_ms);
    return std::make_shared<cp::Gateway>(std::move(throttled), std::move(gw));
}

std::vector<vqacap::prompts::SynthesisExample> load_seed(const AppConfig& cfg, const std::string& flag_path) {
    const std::string path = flag_path.empty() ? cfg.seed_examples_path : flag_path;
    if (path.empty())
        throw vqacap::Error("no seed examples: pass --seed-examples or set seed_examples in the config");
    return vqacap::prompts::load_seed_examples(path);
}

void write_json_file(const std::filesystem::path& path, const json& value) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw vqacap::Error("cannot write " + path.string());
    out << value.dump(2) << '\n';
    if (!out.flush()) throw vqacap::Error("write failure on " + path.string());
}

void print_summary(const json& value) { std::cout << value.dump() << std::endl; }

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string questions, annotations, captions, out;
    std::vector<std::string> splits;
    bool no_strict_five = false;
    std::size_t min_captions = 1;
};

void cmd_ingest(const IngestArgs& args) {
    namespace cs = vqacap::corpus;
    auto records = cs::load_vqa(args.questions, args.annotations);

    std::map<std::string, cs::CaptionSet> caption_sets;
    if (!args.captions.empty()) {
        cs::CocoCaptionOptions opts;
        opts.strict_five = !args.no_strict_five;
        opts.min_captions = args.min_captions;
        caption_sets = cs::load_coco_captions(args.captions, opts);
    }

    std::set<cs::Split> allowed;
    if (args.splits.empty()) {
        allowed = cs::all_splits();
    } else {
        for (const auto& s : args.splits) allowed.insert(cs::split_from_string(s));
    }

    auto joined = cs::join_and_guard(std::move(records), caption_sets, allowed);
    cs::save_corpus(joined.records, args.out);
    print_summary(json{{"records", joined.records.size()}, {"excluded_by_split", joined.excluded}});
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

struct SynthesizeArgs {
    std::string corpus, out, seed_examples;
    int k = 0;  // 0: config value
};

void cmd_synthesize(const SynthesizeArgs& args, const GlobalOpts& global, const AppConfig& cfg) {
    namespace sy = vqacap::synthesis;
    const auto records = vqacap::corpus::load_corpus(args.corpus);
    auto service = build_service(global, cfg);

    sy::GenerateConfig gen;
    gen.seed_examples = load_seed(cfg, args.seed_examples);
    gen.templates = cfg.templates;
    gen.model = cfg.model;
    gen.k = args.k > 0 ? args.k : cfg.synth_k;
    gen.temperature = cfg.synth_temperature;
    gen.max_tokens = cfg.synth_max_tokens;
    gen.expected_examples = cfg.expected_seed_examples;

    struct PerRecord {
        std::vector<sy::CandidateCaption> candidates;
        bool failed = false;
        bool skipped = false;
    };
    const auto results = vqacap::parallel_map(records, global.workers, [&](const vqacap::corpus::VqaRecord& rec) {
        PerRecord out;
        if (!rec.reference_captions) {
            vqacap::log::warn("synthesize: record " + rec.record_id + " has no reference captions, skipped");
            out.skipped = true;
            return out;
        }
        try {
            out.candidates = sy::generate_candidates(rec, gen, *service);
        } catch (const vqacap::ServiceError& e) {
            vqacap::log::error("synthesize: record " + rec.record_id + " failed: " + e.what());
            out.failed = true;
            return out;
        }
        if (out.candidates.empty()) {
            vqacap::log::warn("synthesize: record " + rec.record_id + " produced no usable candidates");
            out.skipped = true;
        }
        return out;
    });

    std::vector<sy::CandidateCaption> all;
    std::size_t skipped = 0, failed = 0;
    for (const auto& r : results) {
        if (r.failed) ++failed;
        if (r.skipped) ++skipped;
        all.insert(all.end(), r.candidates.begin(), r.candidates.end());
    }
    sy::save_candidates(all, args.out);
    print_summary(json{{"records", records.size()},
                       {"candidates", all.size()},
                       {"skipped", skipped},
                       {"failed", failed}});
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

struct FilterArgs {
    std::string corpus, candidates, out, scored_out, seed_examples;
};

void cmd_filter(const FilterArgs& args, const GlobalOpts& global, const AppConfig& cfg) {
    namespace sy = vqacap::synthesis;
    const auto records = vqacap::corpus::load_corpus(args.corpus);
    auto by_record = sy::load_candidates(args.candidates);
    auto service = build_service(global, cfg);

    for (const auto& [id, list] : by_record) {
        (void)list;
        const bool known = std::any_of(records.begin(), records.end(),
                                       [&](const auto& rec) { return rec.record_id == id; });
        if (!known) throw vqacap::CoverageError("filter: candidates reference unknown record " + id);
    }

    sy::FilterConfig filter;
    filter.examples = sy::filter_pool_from_seed(load_seed(cfg, args.seed_examples), cfg.filter_pool_size,
                                                cfg.filter_pool_seed);
    filter.templates = cfg.templates;
    filter.model = cfg.model;
    filter.max_tokens = cfg.filter_max_tokens;
    filter.tie_tolerance = cfg.tie_tolerance;

    const vqacap::caption_metrics::CiderScorer cider(sy::reference_caption_corpus(records));

    struct PerRecord {
        bool has_result = false;
        sy::FilterResult result;
    };
    const auto results = vqacap::parallel_map(records, global.workers, [&](const vqacap::corpus::VqaRecord& rec) {
        PerRecord out;
        auto it = by_record.find(rec.record_id);
        if (it == by_record.end()) {
            vqacap::log::warn("filter: record " + rec.record_id + " has no candidates, skipped");
            return out;
        }
        out.result = sy::filter_candidates(rec, it->second, filter, cider, *service);
        out.has_result = true;
        return out;
    });

    std::vector<sy::CandidateCaption> selected;
    std::vector<sy::CandidateCaption> scored;
    std::size_t skipped = 0;
    for (const auto& r : results) {
        if (!r.has_result) {
            ++skipped;
            continue;
        }
        selected.push_back(r.result.selected());
        scored.insert(scored.end(), r.result.scored.begin(), r.result.scored.end());
    }
    sy::save_candidates(selected, args.out);
    if (!args.scored_out.empty()) sy::save_candidates(scored, args.scored_out);
    print_summary(json{{"selected", selected.size()}, {"skipped", skipped}});
}

// ---------------------------------------------------------------------------
// export-train
// ---------------------------------------------------------------------------

struct ExportArgs {
    std::string corpus, selected, out;
};

void cmd_export_train(const ExportArgs& args, const AppConfig& cfg) {
    namespace sy = vqacap::synthesis;
    const auto records = vqacap::corpus::load_corpus(args.corpus);
    std::unordered_map<std::string, const vqacap::corpus::VqaRecord*> by_id;
    for (const auto& rec : records) by_id.emplace(rec.record_id, &rec);

    std::vector<sy::TrainingRecord> training;
    vqacap::for_each_jsonl(args.selected, [&](std::size_t line_no, const json& j) {
        const auto cand = sy::CandidateCaption::from_json(j);
        auto it = by_id.find(cand.record_id);
        if (it == by_id.end())
            throw vqacap::CoverageError(args.selected + ":" + std::to_string(line_no) +
                                        ": unknown record " + cand.record_id);
        const auto& rec = *it->second;
        sy::TrainingRecord out;
        out.record_id = rec.record_id;
        out.prompt = vqacap::prompts::render_captioner_prompt(rec.question, rec.ocr_tokens, cfg.templates).rendered;
        out.image = rec.image;
        out.caption = cand.text;
        out.candidate_index = cand.candidate_index;
        out.soft_accuracy = std::max(cand.soft_accuracy, 0.0);
        out.cider = cand.cider;
        training.push_back(std::move(out));
    });
    const std::size_t exported = training.size();
    sy::export_training_file(std::move(training), args.out);
    print_summary(json{{"training_records", exported}});
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

struct RetrieveArgs {
    std::string embeddings, out, queries_file;
    std::vector<std::string> queries;
    std::size_t n = 32;
};

void cmd_retrieve(const RetrieveArgs& args) {
    namespace rt = vqacap::retrieval;
    const auto pool = rt::EmbeddingPool::load(args.embeddings);

    std::vector<std::string> query_ids = args.queries;
    if (!args.queries_file.empty()) {
        std::ifstream in(args.queries_file);
        if (!in) throw vqacap::Error("cannot open " + args.queries_file);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) query_ids.push_back(line);
        }
    }
    if (query_ids.empty()) {
        for (const auto& rec : pool.records()) query_ids.push_back(rec.record_id);
    }

    vqacap::JsonlWriter writer(args.out);
    for (const auto& id : query_ids) {
        const auto& query = pool.at(id);
        const auto top = rt::top_n(query, pool, args.n);
        json neighbors = json::array();
        for (const auto& scored : top)
            neighbors.push_back({{"record_id", scored.record_id}, {"score", scored.score}});
        writer.write(json{{"record_id", id}, {"neighbors", neighbors}});
    }
    writer.close();
    print_summary(json{{"queries", query_ids.size()}, {"n", args.n}});
}

// ---------------------------------------------------------------------------
// run-vqa / compare
// ---------------------------------------------------------------------------

struct RunArgs {
    std::string corpus, examples, embeddings, out_dir;
    std::vector<std::string> captions;
    std::vector<std::string> example_captions;
    std::string task = "okvqa";
    std::string strategy = "retrieved";
    int n_examples = -2;  // -2: config/default
    std::vector<std::uint64_t> seeds;
    bool caption_service = false;
};

vqacap::runner::RunConfig make_run_config(const RunArgs& args, const GlobalOpts& global, const AppConfig& cfg) {
    vqacap::runner::RunConfig rc;
    rc.task = vqacap::runner::task_from_string(args.task);
    rc.strategy = vqacap::runner::strategy_from_string(args.strategy);
    rc.n_examples = args.n_examples >= -1 ? args.n_examples : cfg.run_n_examples;
    rc.seeds = args.seeds.empty() ? cfg.seeds : args.seeds;
    rc.instruction = cfg.instruction;
    rc.model = cfg.model;
    rc.max_tokens = cfg.run_max_tokens;
    rc.templates = cfg.templates;
    rc.workers = global.workers;
    return rc;
}

std::unique_ptr<vqacap::runner::CaptionSource> make_caption_source(
    const std::vector<std::string>& files, bool service_backed,
    vqacap::completion::CompletionService& service, const AppConfig& cfg) {
    if (service_backed) {
        return std::make_unique<vqacap::runner::ServiceCaptionSource>(service, cfg.model, cfg.templates,
                                                                      cfg.synth_max_tokens);
    }
    if (files.empty()) throw vqacap::Error("pass --captions (or --caption-service)");
    auto source = std::make_unique<vqacap::runner::FileCaptionSource>();
    for (const auto& f : files) source->add_file(f);
    return source;
}

json full_report_json(const vqacap::runner::TaskResult& result) {
    json report = result.to_json();
    json runs = json::array();
    for (const auto& run : result.runs) {
        json r{{"seed", run.seed},
               {"aggregate", run.report.aggregate},
               {"count", run.report.count},
               {"per_instance", run.report.to_json().at("per_instance")}};
        runs.push_back(std::move(r));
    }
    report["runs"] = std::move(runs);
    return report;
}

void cmd_run_vqa(const RunArgs& args, const GlobalOpts& global, const AppConfig& cfg) {
    namespace rn = vqacap::runner;
    const auto records = vqacap::corpus::load_corpus(args.corpus);
    auto service = build_service(global, cfg);
    const auto rc = make_run_config(args, global, cfg);

    auto captions = make_caption_source(args.captions, args.caption_service, *service, cfg);

    rn::ExamplePool examples;
    if (rc.resolved_n_examples() > 0) {
        if (args.examples.empty()) throw vqacap::Error("pass --examples when n_examples > 0");
        const auto example_records = vqacap::corpus::load_corpus(args.examples);
        if (args.example_captions.empty()) {
            examples = rn::ExamplePool::build(example_records, *captions);
        } else {
            auto example_captions =
                make_caption_source(args.example_captions, false, *service, cfg);
            examples = rn::ExamplePool::build(example_records, *example_captions);
        }
    }

    vqacap::retrieval::EmbeddingPool embeddings;
    if (!args.embeddings.empty()) embeddings = vqacap::retrieval::EmbeddingPool::load(args.embeddings);

    rn::RunContext ctx;
    ctx.captions = captions.get();
    ctx.examples = &examples;
    ctx.embeddings = args.embeddings.empty() ? nullptr : &embeddings;
    ctx.service = service.get();

    const auto result = rn::run_task(records, ctx, rc);

    if (!args.out_dir.empty()) {
        std::filesystem::create_directories(args.out_dir);
        const std::filesystem::path dir(args.out_dir);
        for (const auto& run : result.runs)
            rn::save_predictions(run.predictions, dir / ("predictions_seed" + std::to_string(run.seed) + ".jsonl"));
        write_json_file(dir / "report.json", full_report_json(result));
    }
    print_summary(result.to_json());
}

struct CompareArgs {
    RunArgs run;
    std::vector<std::string> captions_b;
    std::string out;
};

void cmd_compare(const CompareArgs& args, const GlobalOpts& global, const AppConfig& cfg) {
    namespace rn = vqacap::runner;
    const auto records = vqacap::corpus::load_corpus(args.run.corpus);
    auto service = build_service(global, cfg);
    const auto rc = make_run_config(args.run, global, cfg);

    auto source_a = make_caption_source(args.run.captions, false, *service, cfg);
    auto source_b = make_caption_source(args.captions_b, false, *service, cfg);

    rn::ExamplePool examples;
    if (rc.resolved_n_examples() > 0) {
        if (args.run.examples.empty() || args.run.example_captions.empty())
            throw vqacap::Error("compare needs --examples and --example-captions (held fixed across sides)");
        const auto example_records = vqacap::corpus::load_corpus(args.run.examples);
        auto example_captions = make_caption_source(args.run.example_captions, false, *service, cfg);
        examples = rn::ExamplePool::build(example_records, *example_captions);
    }

    vqacap::retrieval::EmbeddingPool embeddings;
    if (!args.run.embeddings.empty()) embeddings = vqacap::retrieval::EmbeddingPool::load(args.run.embeddings);

    rn::RunContext ctx;
    ctx.examples = &examples;
    ctx.embeddings = args.run.embeddings.empty() ? nullptr : &embeddings;
    ctx.service = service.get();

    const auto report = rn::compare_caption_sources(records, *source_a, *source_b, ctx, rc);
    if (!args.out.empty()) write_json_file(args.out, report.to_json());
    print_summary(json{{"metric", std::string(vqacap::metrics::to_string(report.metric))},
                       {"aggregate_a", report.aggregate_a},
                       {"aggregate_b", report.aggregate_b},
                       {"delta", report.delta}});
}

// ---------------------------------------------------------------------------
// evaluate / score-captions
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string corpus, predictions, metric = "standard_vqa_accuracy", out;
};

void cmd_evaluate(const EvaluateArgs& args) {
    const auto records = vqacap::corpus::load_corpus(args.corpus);
    const auto predictions = vqacap::runner::load_predictions(args.predictions);
    const auto metric = vqacap::metrics::metric_from_string(args.metric);
    const auto report = vqacap::runner::score_predictions(predictions, records, metric);
    if (!args.out.empty()) write_json_file(args.out, report.to_json());
    print_summary(json{{"metric", args.metric}, {"aggregate", report.aggregate}, {"count", report.count}});
}

struct ScoreCaptionsArgs {
    std::string corpus, captions, metric = "cider", out;
};

void cmd_score_captions(const ScoreCaptionsArgs& args) {
    namespace cm = vqacap::caption_metrics;
    const auto records = vqacap::corpus::load_corpus(args.corpus);

    std::map<std::string, std::vector<std::string>> references;
    std::unordered_map<std::string, std::string> image_to_record;
    for (const auto& rec : records) {
        if (!rec.reference_captions) continue;
        references[rec.record_id] = rec.reference_captions->captions;
        image_to_record[rec.image.image_id] = rec.record_id;
    }

    std::vector<std::pair<std::string, std::string>> candidates;
    vqacap::for_each_jsonl(args.captions, [&](std::size_t line_no, const json& j) {
        std::string id;
        if (j.contains("record_id")) {
            id = j.at("record_id").get<std::string>();
        } else if (j.contains("image_id")) {
            auto it = image_to_record.find(j.at("image_id").get<std::string>());
            if (it == image_to_record.end())
                throw vqacap::CoverageError(args.captions + ":" + std::to_string(line_no) +
                                            ": unknown image_id");
            id = it->second;
        } else {
            throw vqacap::ParseError(args.captions + ":" + std::to_string(line_no) +
                                     ": need 'record_id' or 'image_id'");
        }
        candidates.emplace_back(std::move(id), j.at("caption").get<std::string>());
    });

    cm::CaptionMetric metric;
    if (args.metric == "cider") {
        metric = cm::CaptionMetric::cider;
    } else if (args.metric == "bleu4") {
        metric = cm::CaptionMetric::bleu4;
    } else {
        throw vqacap::Error("score-captions: metric must be cider or bleu4");
    }
    const auto report = cm::caption_similarity(candidates, references, metric);
    if (!args.out.empty()) write_json_file(args.out, report.to_json());
    print_summary(json{{"metric", args.metric}, {"aggregate", report.aggregate}, {"count", report.count}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caption synthesis, filtering, retrieval, and VQA evaluation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts global;
    app.add_option("--config", global.config_path, "JSON config file");
    app.add_option("--cache-dir", global.cache_dir, "completion response cache directory");
    app.add_option("--mock", global.mock_path, "deterministic mock table (JSON) instead of the HTTP service");
    app.add_option("--workers", global.workers, "worker threads for record-level fan-out");
    app.add_option("--log-level", global.log_level, "debug|info|warn|error|off");

    IngestArgs ingest;
    auto* cmd_ing = app.add_subcommand("ingest", "join question/annotation/caption files into a corpus");
    cmd_ing->add_option("--questions", ingest.questions, "questions JSON")->required();
    cmd_ing->add_option("--annotations", ingest.annotations, "annotations JSON")->required();
    cmd_ing->add_option("--captions", ingest.captions, "COCO caption annotations JSON");
    cmd_ing->add_option("--splits", ingest.splits, "allowed image splits (default: all)")->delimiter(',');
    cmd_ing->add_flag("--no-strict-five", ingest.no_strict_five, "keep images with other than 5 captions");
    cmd_ing->add_option("--min-captions", ingest.min_captions, "minimum captions per image when not strict");
    cmd_ing->add_option("--out", ingest.out, "output corpus JSONL")->required();

    SynthesizeArgs synth;
    auto* cmd_syn = app.add_subcommand("synthesize", "sample candidate captions for every record");
    cmd_syn->add_option("--corpus", synth.corpus, "corpus JSONL")->required();
    cmd_syn->add_option("--out", synth.out, "output candidates JSONL")->required();
    cmd_syn->add_option("--seed-examples", synth.seed_examples, "seed example JSON file");
    cmd_syn->add_option("--k", synth.k, "candidates per record");

    FilterArgs filter;
    auto* cmd_fil = app.add_subcommand("filter", "select the best candidate per record via the QA check");
    cmd_fil->add_option("--corpus", filter.corpus, "corpus JSONL")->required();
    cmd_fil->add_option("--candidates", filter.candidates, "candidates JSONL")->required();
    cmd_fil->add_option("--out", filter.out, "output selected JSONL")->required();
    cmd_fil->add_option("--scored-out", filter.scored_out, "optional dump of every scored candidate");
    cmd_fil->add_option("--seed-examples", filter.seed_examples, "seed example JSON file");

    ExportArgs exp;
    auto* cmd_exp = app.add_subcommand("export-train", "write the captioner training file");
    cmd_exp->add_option("--corpus", exp.corpus, "corpus JSONL")->required();
    cmd_exp->add_option("--selected", exp.selected, "selected candidates JSONL")->required();
    cmd_exp->add_option("--out", exp.out, "output training JSONL")->required();

    RetrieveArgs retr;
    auto* cmd_ret = app.add_subcommand("retrieve", "top-n similar records by summed embedding cosine");
    cmd_ret->add_option("--embeddings", retr.embeddings, "embedding JSONL")->required();
    cmd_ret->add_option("--out", retr.out, "output JSONL")->required();
    cmd_ret->add_option("--query", retr.queries, "query record id (repeatable)");
    cmd_ret->add_option("--queries-file", retr.queries_file, "file with one record id per line");
    cmd_ret->add_option("--n", retr.n, "neighbors per query");

    RunArgs run;
    auto* cmd_run = app.add_subcommand("run-vqa", "answer a corpus with in-context learning");
    cmd_run->add_option("--corpus", run.corpus, "test corpus JSONL")->required();
    cmd_run->add_option("--examples", run.examples, "example corpus JSONL");
    cmd_run->add_option("--captions", run.captions, "caption file (repeatable)");
    cmd_run->add_option("--example-captions", run.example_captions, "caption file for the example corpus");
    cmd_run->add_option("--embeddings", run.embeddings, "embedding JSONL (retrieved strategy)");
    cmd_run->add_option("--task", run.task, "okvqa|aokvqa_da|aokvqa_mc|vqav2|textvqa|webqa");
    cmd_run->add_option("--strategy", run.strategy, "retrieved|random");
    cmd_run->add_option("--n", run.n_examples, "in-context examples (default: task convention)");
    cmd_run->add_option("--seeds", run.seeds, "seeds for the random strategy")->delimiter(',');
    cmd_run->add_flag("--caption-service", run.caption_service, "caption via the completion service");
    cmd_run->add_option("--out-dir", run.out_dir, "directory for predictions and report");

    EvaluateArgs eval;
    auto* cmd_eval = app.add_subcommand("evaluate", "score a predictions file against a corpus");
    cmd_eval->add_option("--corpus", eval.corpus, "corpus JSONL")->required();
    cmd_eval->add_option("--predictions", eval.predictions, "predictions JSONL")->required();
    cmd_eval->add_option("--metric", eval.metric,
                         "soft_vqa_accuracy|standard_vqa_accuracy|multiple_choice_accuracy|keyword_accuracy");
    cmd_eval->add_option("--out", eval.out, "full report JSON");

    ScoreCaptionsArgs score;
    auto* cmd_sc = app.add_subcommand("score-captions", "BLEU-4 / CIDEr against reference captions");
    cmd_sc->add_option("--corpus", score.corpus, "corpus JSONL with reference captions")->required();
    cmd_sc->add_option("--captions", score.captions, "candidate caption JSONL")->required();
    cmd_sc->add_option("--metric", score.metric, "cider|bleu4");
    cmd_sc->add_option("--out", score.out, "full report JSON");

    CompareArgs compare;
    auto* cmd_cmp = app.add_subcommand("compare", "paired comparison of two caption sources");
    cmd_cmp->add_option("--corpus", compare.run.corpus, "test corpus JSONL")->required();
    cmd_cmp->add_option("--examples", compare.run.examples, "example corpus JSONL");
    cmd_cmp->add_option("--captions-a", compare.run.captions, "caption file for source A")->required();
    cmd_cmp->add_option("--captions-b", compare.captions_b, "caption file for source B")->required();
    cmd_cmp->add_option("--example-captions", compare.run.example_captions, "caption file for the example corpus");
    cmd_cmp->add_option("--embeddings", compare.run.embeddings, "embedding JSONL (retrieved strategy)");
    cmd_cmp->add_option("--task", compare.run.task, "task name");
    cmd_cmp->add_option("--strategy", compare.run.strategy, "retrieved|random");
    cmd_cmp->add_option("--n", compare.run.n_examples, "in-context examples");
    cmd_cmp->add_option("--seeds", compare.run.seeds, "seeds for the random strategy")->delimiter(',');
    cmd_cmp->add_option("--out", compare.out, "paired report JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (global.log_level == "debug")
            vqacap::log::set_level(vqacap::log::Level::debug);
        else if (global.log_level == "info")
            vqacap::log::set_level(vqacap::log::Level::info);
        else if (global.log_level == "warn")
            vqacap::log::set_level(vqacap::log::Level::warn);
        else if (global.log_level == "error")
            vqacap::log::set_level(vqacap::log::Level::error);
        else if (global.log_level == "off")
            vqacap::log::set_level(vqacap::log::Level::off);
        else
            throw vqacap::Error("unknown log level: " + global.log_level);

        const AppConfig cfg = load_config(global.config_path);

        if (cmd_ing->parsed()) cmd_ingest(ingest);
        if (cmd_syn->parsed()) cmd_synthesize(synth, global, cfg);
        if (cmd_fil->parsed()) cmd_filter(filter, global, cfg);
        if (cmd_exp->parsed()) cmd_export_train(exp, cfg);
        if (cmd_ret->parsed()) cmd_retrieve(retr);
        if (cmd_run->parsed()) cmd_run_vqa(run, global, cfg);
        if (cmd_eval->parsed()) cmd_evaluate(eval);
        if (cmd_sc->parsed()) cmd_score_captions(score);
        if (cmd_cmp->parsed()) cmd_compare(compare, global, cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
