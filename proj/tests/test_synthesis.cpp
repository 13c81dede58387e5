#include <catch2/catch_amalgamated.hpp>

#include <vqacap/completion_mock.hpp>
#include <vqacap/synthesis.hpp>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace vqacap;
using namespace vqacap::synthesis;
using completion::CompletionRequest;
using completion::CompletionResponse;
using completion::CompletionService;
using completion::MockCompletionService;
using completion::MockRule;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("vqacap_synthesis_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

corpus::VqaRecord make_record(std::string id, std::string image_id, std::string question,
                              std::vector<std::string> answers,
                              std::vector<std::string> captions) {
    corpus::VqaRecord rec;
    rec.record_id = std::move(id);
    rec.image = {std::move(image_id), corpus::Split::train2014, ""};
    rec.question = std::move(question);
    rec.answers = std::move(answers);
    if (!captions.empty()) {
        corpus::CaptionSet set;
        set.image = rec.image;
        set.captions = std::move(captions);
        rec.reference_captions = std::move(set);
    }
    return rec;
}

// The synthesis prompt ends with the target block, so a suffix match on
// "Question/Answer/Summary:" pins one record's sampling responses.
MockRule synth_rule(const std::string& question, const std::string& answer,
                    std::vector<std::string> captions,
                    MockRule::Sampling sampling = MockRule::Sampling::cycle) {
    return {MockRule::Match::suffix, "Question: " + question + "\nAnswer: " + answer + "\nSummary:",
            std::move(captions), sampling};
}

// The QA prompt ends with the test block, so candidate text + question pin
// the graded answer.
MockRule qa_rule(const std::string& context, const std::string& question,
                 const std::string& answer) {
    return {MockRule::Match::suffix, "Context: " + context + "\n===\nQ: " + question + "\nA:",
            {answer}, MockRule::Sampling::cycle};
}

GenerateConfig small_generate_config() {
    GenerateConfig config;
    config.seed_examples = {{"A cat on a mat.", "What pet?", "cat", "A cat sits on a mat."},
                            {"A blue car.", "What color?", "blue", "A blue car parked outside."}};
    config.k = 5;
    return config;
}

const caption_metrics::CiderScorer& shared_scorer() {
    static caption_metrics::CiderScorer scorer(std::map<std::string, std::vector<std::string>>{
        {"img1", {"a red ball on green grass", "a ball lying on the lawn",
                  "a red toy ball outdoors", "grass with a ball on it", "a ball on the grass"}},
        {"img2", {"a tall giraffe standing by trees", "a giraffe near some trees",
                  "one giraffe in the savanna", "a giraffe next to a tree", "wildlife near trees"}},
    });
    return scorer;
}

}  // namespace

TEST_CASE("candidate generation samples k captions with indices", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy is on the grass?", {"ball"},
                              {"a red ball on green grass", "a ball in the yard",
                               "round toy on grass", "a ball outside", "red ball on lawn"});
    MockCompletionService mock({synth_rule(record.question, "ball",
                                           {"cap one", "cap two", "cap three", "cap four",
                                            "cap five"})});
    auto candidates = generate_candidates(record, small_generate_config(), mock);
    REQUIRE(candidates.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(candidates[static_cast<std::size_t>(i)].candidate_index == i);
        CHECK(candidates[static_cast<std::size_t>(i)].record_id == "r1");
    }
    CHECK(candidates[0].text == "cap one");
    CHECK(candidates[4].text == "cap five");
    // scores are unset until the filter runs
    CHECK(candidates[0].soft_accuracy < 0.0);
    CHECK(candidates[0].cider < 0.0);
}

TEST_CASE("candidate generation sends the expected sampling request", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy?", {"ball", "ball", "toy"},
                              {"a red ball", "a toy ball"});
    struct Probe : CompletionService {
        CompletionRequest seen;
        CompletionResponse complete(const CompletionRequest& request) override {
            seen = request;
            CompletionResponse resp;
            resp.choices.assign(static_cast<std::size_t>(request.num_samples), "cap");
            return resp;
        }
    } probe;

    auto config = small_generate_config();
    config.temperature = 0.9;
    config.max_tokens = 48;
    (void)generate_candidates(record, config, probe);
    CHECK(probe.seen.num_samples == 5);
    CHECK(probe.seen.temperature == 0.9);
    CHECK(probe.seen.max_tokens == 48);
    CHECK(probe.seen.stop == std::vector<std::string>{"\n"});
    // the target block carries the flattened captions and the modal answer
    CHECK(probe.seen.prompt.ends_with("Original contexts: a red ball a toy ball\n"
                                      "Question: What toy?\nAnswer: ball\nSummary:"));
}

TEST_CASE("candidate generation trims, drops empties, collapses duplicates", "[synthesis]") {
    auto record = make_record("r1", "img1", "What?", {"x"}, {"some caption"});
    MockCompletionService mock(
        {synth_rule("What?", "x", {" cap a ", "cap a", "cap b", "   ", "cap b"})});
    auto candidates = generate_candidates(record, small_generate_config(), mock);
    REQUIRE(candidates.size() == 2);
    CHECK(candidates[0].text == "cap a");
    CHECK(candidates[0].candidate_index == 0);  // kept the lowest sample index
    CHECK(candidates[1].text == "cap b");
    CHECK(candidates[1].candidate_index == 2);
}

TEST_CASE("candidate generation needs reference captions", "[synthesis]") {
    auto record = make_record("r1", "img1", "What?", {"x"}, {});
    MockCompletionService mock({});
    CHECK_THROWS(generate_candidates(record, small_generate_config(), mock));
}

TEST_CASE("the full seed prompt reproduces the recorded completion", "[synthesis]") {
    const fs::path root(VQACAP_SOURCE_ROOT);
    const json target = load_json_file(root / "tests/fixtures/synthesis_target.json");
    std::ifstream golden_in(root / "tests/golden/synthesis_prompt.txt", std::ios::binary);
    std::ostringstream golden;
    golden << golden_in.rdbuf();

    auto record = make_record("fig", "img_fig", target.at("question").get<std::string>(),
                              {target.at("answer").get<std::string>()},
                              target.at("captions").get<std::vector<std::string>>());

    MockCompletionService mock({{MockRule::Match::full, golden.str(),
                                 {target.at("lm_completion").get<std::string>()},
                                 MockRule::Sampling::cycle}},
                               "WRONG PROMPT BYTES");

    GenerateConfig config;
    config.seed_examples = prompts::load_seed_examples(root / "data/synthesis_seed_examples.json");
    config.expected_examples = static_cast<int>(config.seed_examples.size());
    config.k = 1;

    auto candidates = generate_candidates(record, config, mock);
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0].text == target.at("lm_completion").get<std::string>());
}

TEST_CASE("filter picks the candidate whose answer grades best", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy is on the grass?",
                              {"ball", "ball", "ball", "toy"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    std::vector<CandidateCaption> candidates{
        {"r1", 0, "a skateboard leaning on a wall", -1.0, -1.0, ""},
        {"r1", 1, "a red ball on green grass", -1.0, -1.0, ""},
    };
    MockCompletionService mock({
        qa_rule("a skateboard leaning on a wall", record.question, "skateboard"),
        qa_rule("a red ball on green grass", record.question, "ball"),
    });

    auto result = filter_candidates(record, candidates, FilterConfig{}, shared_scorer(), mock);
    CHECK(result.selected().text == "a red ball on green grass");
    CHECK(result.selected().qa_answer == "ball");
    CHECK(result.selected().soft_accuracy == 1.0);
    for (const auto& c : result.scored) {
        CHECK(c.soft_accuracy >= 0.0);  // every candidate was graded
        CHECK(result.selected().soft_accuracy >= c.soft_accuracy);
    }
}

TEST_CASE("soft-accuracy ties fall back to cider", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy is on the grass?", {"ball", "ball", "ball"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    // both answer correctly; the reference-like caption has the higher CIDEr
    // and must win even from the higher candidate index
    std::vector<CandidateCaption> candidates{
        {"r1", 0, "ball", -1.0, -1.0, ""},
        {"r1", 1, "a red ball on green grass", -1.0, -1.0, ""},
    };
    MockCompletionService mock({
        qa_rule("ball", record.question, "ball"),
        qa_rule("a red ball on green grass", record.question, "ball"),
    });

    auto result = filter_candidates(record, candidates, FilterConfig{}, shared_scorer(), mock);
    CHECK(result.selected().candidate_index == 1);
    CHECK(result.selected().text == "a red ball on green grass");
    // both tied candidates carry their tie-break scores
    CHECK(result.scored[0].cider >= 0.0);
    CHECK(result.scored[1].cider > result.scored[0].cider);
}

TEST_CASE("full ties resolve to the lowest candidate index", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy is on the grass?", {"ball"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    // neither candidate shares an n-gram with the references: CIDEr 0 for both
    std::vector<CandidateCaption> candidates{
        {"r1", 2, "xyzzy plugh", -1.0, -1.0, ""},
        {"r1", 0, "zzyzx quux", -1.0, -1.0, ""},
    };
    MockCompletionService mock({
        qa_rule("xyzzy plugh", record.question, "ball"),
        qa_rule("zzyzx quux", record.question, "ball"),
    });

    auto result = filter_candidates(record, candidates, FilterConfig{}, shared_scorer(), mock);
    CHECK(result.selected().candidate_index == 0);
    CHECK(result.selected().text == "zzyzx quux");
}

TEST_CASE("filter outcome ignores candidate arrival order", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy is on the grass?", {"ball", "ball", "ball"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    std::vector<CandidateCaption> candidates{
        {"r1", 0, "ball", -1.0, -1.0, ""},
        {"r1", 1, "a red ball on green grass", -1.0, -1.0, ""},
        {"r1", 2, "a skateboard leaning on a wall", -1.0, -1.0, ""},
    };
    MockCompletionService mock({
        qa_rule("ball", record.question, "ball"),
        qa_rule("a red ball on green grass", record.question, "ball"),
        qa_rule("a skateboard leaning on a wall", record.question, "skateboard"),
    });

    auto forward = filter_candidates(record, candidates, FilterConfig{}, shared_scorer(), mock);
    std::vector<CandidateCaption> reversed{candidates[2], candidates[0], candidates[1]};
    auto backward = filter_candidates(record, reversed, FilterConfig{}, shared_scorer(), mock);
    CHECK(forward.selected().text == backward.selected().text);
    CHECK(forward.selected().candidate_index == backward.selected().candidate_index);
}

TEST_CASE("a QA failure grades the candidate zero instead of aborting", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy?", {"ball", "ball", "ball"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    struct Flaky : CompletionService {
        CompletionResponse complete(const CompletionRequest& request) override {
            if (request.prompt.find("Context: broken candidate") != std::string::npos)
                throw RetryableError("simulated outage");
            CompletionResponse resp;
            resp.choices = {"ball"};
            return resp;
        }
    } flaky;

    std::vector<CandidateCaption> candidates{
        {"r1", 0, "broken candidate", -1.0, -1.0, ""},
        {"r1", 1, "a red ball on green grass", -1.0, -1.0, ""},
    };
    auto result = filter_candidates(record, candidates, FilterConfig{}, shared_scorer(), flaky);
    CHECK(result.scored[0].soft_accuracy == 0.0);
    CHECK(result.scored[0].qa_answer.empty());
    CHECK(result.selected().candidate_index == 1);
}

TEST_CASE("single candidates are selected with their cider filled in", "[synthesis]") {
    auto record = make_record("r1", "img1", "What toy?", {"ball"},
                              {"a red ball on green grass", "a ball lying on the lawn",
                               "a red toy ball outdoors", "grass with a ball on it",
                               "a ball on the grass"});
    std::vector<CandidateCaption> one{{"r1", 0, "a red ball on green grass", -1.0, -1.0, ""}};
    MockCompletionService mock({qa_rule("a red ball on green grass", record.question, "ball")});
    auto result = filter_candidates(record, one, FilterConfig{}, shared_scorer(), mock);
    CHECK(result.selected().candidate_index == 0);
    CHECK(result.selected().cider > 0.0);

    CHECK_THROWS(filter_candidates(record, {}, FilterConfig{}, shared_scorer(), mock));
}

TEST_CASE("the filter demonstration pool derives from the seed examples", "[synthesis]") {
    std::vector<prompts::SynthesisExample> seed;
    for (int i = 0; i < 8; ++i) {
        const std::string n = std::to_string(i);
        seed.push_back({"ctx " + n, "q " + n, "a " + n, "summary " + n});
    }
    auto pool = filter_pool_from_seed(seed, 4, 0);
    REQUIRE(pool.size() == 4);
    for (const auto& ex : pool) {
        CHECK(ex.context.starts_with("summary "));  // the summary doubles as context
        CHECK(ex.question.starts_with("q "));
    }
    // reproducible for a fixed seed
    auto again = filter_pool_from_seed(seed, 4, 0);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        CHECK(pool[i].context == again[i].context);
    }
    // asking for more than exists clamps
    CHECK(filter_pool_from_seed(seed, 99, 0).size() == 8);
}

namespace {

// End-to-end corpus fixture: three records, one without captions, plus a
// mock table covering generation and QA for every candidate.
std::vector<corpus::VqaRecord> pipeline_records() {
    return {
        make_record("r1", "img1", "What toy is on the grass?", {"ball", "ball", "ball"},
                    {"a red ball on green grass", "a ball lying on the lawn",
                     "a red toy ball outdoors", "grass with a ball on it",
                     "a ball on the grass"}),
        make_record("r2", "img2", "What animal is near the trees?", {"giraffe", "giraffe"},
                    {"a tall giraffe standing by trees", "a giraffe near some trees",
                     "one giraffe in the savanna", "a giraffe next to a tree",
                     "wildlife near trees"}),
        make_record("r3", "img3", "What is missing here?", {"captions"}, {}),
    };
}

MockCompletionService pipeline_mock(MockRule::Sampling sampling = MockRule::Sampling::cycle) {
    std::vector<MockRule> rules{
        synth_rule("What toy is on the grass?", "ball",
                   {"a red ball on green grass", "toy on the lawn", "a ball",
                    "something else entirely", "a red ball on green grass"},
                   sampling),
        synth_rule("What animal is near the trees?", "giraffe",
                   {"a giraffe near trees", "tall animal outside", "a giraffe near trees",
                    "the zoo", "savanna wildlife"},
                   sampling),
        qa_rule("a red ball on green grass", "What toy is on the grass?", "ball"),
        qa_rule("toy on the lawn", "What toy is on the grass?", "toy"),
        qa_rule("a ball", "What toy is on the grass?", "ball"),
        qa_rule("something else entirely", "What toy is on the grass?", "nothing"),
        qa_rule("a giraffe near trees", "What animal is near the trees?", "giraffe"),
        qa_rule("tall animal outside", "What animal is near the trees?", "elephant"),
        qa_rule("the zoo", "What animal is near the trees?", "zoo"),
        qa_rule("savanna wildlife", "What animal is near the trees?", "giraffe"),
    };
    return MockCompletionService(std::move(rules), "unmatched");
}

SynthesisConfig pipeline_config(std::size_t workers) {
    SynthesisConfig config;
    config.generate = small_generate_config();
    config.workers = workers;
    return config;
}

std::string dump_records(const std::vector<TrainingRecord>& records) {
    std::string out;
    for (const auto& rec : records) out += rec.to_json().dump() + "\n";
    return out;
}

}  // namespace

TEST_CASE("the dataset pipeline synthesizes, filters, and counts skips", "[synthesis]") {
    auto records = pipeline_records();
    auto mock = pipeline_mock();
    auto output = synthesize_dataset(records, pipeline_config(1), mock);

    CHECK(output.summary.synthesized == 2);
    CHECK(output.summary.skipped == 1);  // r3 has no captions
    CHECK(output.summary.failed == 0);
    REQUIRE(output.records.size() == 2);

    const auto& first = output.records[0];
    CHECK(first.record_id == "r1");
    CHECK(first.prompt == "describe to answer: What toy is on the grass?");
    CHECK(first.image.image_id == "img1");
    // "a red ball on green grass" answers correctly and matches a reference
    CHECK(first.caption == "a red ball on green grass");
    CHECK(first.soft_accuracy == 1.0);

    const auto& second = output.records[1];
    CHECK(second.record_id == "r2");
    CHECK(second.caption == "a giraffe near trees");
}

TEST_CASE("a record whose generation keeps failing is counted, not fatal", "[synthesis]") {
    struct Routing : CompletionService {
        MockCompletionService mock = pipeline_mock();
        CompletionResponse complete(const CompletionRequest& request) override {
            if (request.prompt.find("What animal is near the trees?\nAnswer:") != std::string::npos)
                throw FatalServiceError("record is cursed");
            return mock.complete(request);
        }
    } routing;

    auto records = pipeline_records();
    auto output = synthesize_dataset(records, pipeline_config(1), routing);
    CHECK(output.summary.synthesized == 1);
    CHECK(output.summary.failed == 1);
    CHECK(output.summary.skipped == 1);
    REQUIRE(output.records.size() == 1);
    CHECK(output.records[0].record_id == "r1");
}

TEST_CASE("the pipeline output is identical at any worker count", "[synthesis]") {
    auto records = pipeline_records();
    // seeded-draw sampling exercises the order-free mock path
    auto mock1 = pipeline_mock(MockRule::Sampling::draw);
    auto out1 = synthesize_dataset(records, pipeline_config(1), mock1);
    auto mock4 = pipeline_mock(MockRule::Sampling::draw);
    auto out4 = synthesize_dataset(records, pipeline_config(4), mock4);
    CHECK(dump_records(out1.records) == dump_records(out4.records));

    auto mock_again = pipeline_mock(MockRule::Sampling::draw);
    auto repeat = synthesize_dataset(records, pipeline_config(4), mock_again);
    CHECK(dump_records(out4.records) == dump_records(repeat.records));
}

TEST_CASE("candidate files round-trip grouped and sorted", "[synthesis]") {
    TempDir tmp;
    std::vector<CandidateCaption> candidates{
        {"r2", 1, "beta", 0.5, -1.0, "b"},
        {"r1", 3, "delta", -1.0, -1.0, ""},
        {"r1", 0, "alpha", 1.0, 2.5, "a"},
    };
    const fs::path path = tmp.path / "candidates.jsonl";
    save_candidates(candidates, path);

    auto grouped = load_candidates(path);
    REQUIRE(grouped.size() == 2);
    REQUIRE(grouped.at("r1").size() == 2);
    CHECK(grouped.at("r1")[0].candidate_index == 0);  // sorted within the record
    CHECK(grouped.at("r1")[0].text == "alpha");
    CHECK(grouped.at("r1")[0].soft_accuracy == 1.0);
    CHECK(grouped.at("r1")[0].cider == 2.5);
    CHECK(grouped.at("r1")[1].candidate_index == 3);
    CHECK(grouped.at("r1")[1].soft_accuracy == -1.0);  // unset survives the trip
    CHECK(grouped.at("r2")[0].qa_answer == "b");
}

TEST_CASE("training files export sorted and reload byte-identically", "[synthesis]") {
    TempDir tmp;
    auto records = pipeline_records();
    auto mock = pipeline_mock();
    auto output = synthesize_dataset(records, pipeline_config(2), mock);

    const fs::path first = tmp.path / "train.jsonl";
    export_training_file(output.records, first);
    auto reloaded = load_training_file(first);
    REQUIRE(reloaded.size() == output.records.size());
    CHECK(reloaded[0].record_id == "r1");
    CHECK(reloaded[0].caption == output.records[0].caption);
    CHECK(reloaded[0].image.split == corpus::Split::train2014);

    const fs::path second = tmp.path / "train2.jsonl";
    export_training_file(reloaded, second);
    std::ifstream a(first, std::ios::binary), b(second, std::ios::binary);
    std::ostringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());

    CHECK_THROWS(export_training_file({}, tmp.path / "empty.jsonl"));
}
