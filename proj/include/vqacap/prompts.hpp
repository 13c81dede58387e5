#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::prompts {

// Prompt text is part of the wire contract with the language model, so every
// renderer here is byte-exact and covered by golden-file tests. Templates are
// externalized so deviations are reviewable in config instead of code.
struct PromptTemplates {
    std::string captioner_prefix = "describe to answer: ";
    std::string ocr_separator = " OCR: ";
    std::string synthesis_instruction = "Summarize the context to help answer the question";
    std::string icl_instruction = "Please answer the question according to the above context.";

    static PromptTemplates from_json(const json& j) {
        PromptTemplates t;
        if (j.contains("captioner_prefix")) t.captioner_prefix = j.at("captioner_prefix").get<std::string>();
        if (j.contains("ocr_separator")) t.ocr_separator = j.at("ocr_separator").get<std::string>();
        if (j.contains("synthesis_instruction"))
            t.synthesis_instruction = j.at("synthesis_instruction").get<std::string>();
        if (j.contains("icl_instruction")) t.icl_instruction = j.at("icl_instruction").get<std::string>();
        return t;
    }

    json to_json() const {
        return json{{"captioner_prefix", captioner_prefix},
                    {"ocr_separator", ocr_separator},
                    {"synthesis_instruction", synthesis_instruction},
                    {"icl_instruction", icl_instruction}};
    }
};

// ---------------------------------------------------------------------------
// Captioner prompt: prefix + question, plus the OCR tokens joined with
// single spaces when present.
// ---------------------------------------------------------------------------

struct CaptionerPrompt {
    std::string question;
    std::vector<std::string> ocr_tokens;
    std::string rendered;
};

inline CaptionerPrompt render_captioner_prompt(std::string_view question,
                                               const std::vector<std::string>& ocr_tokens = {},
                                               const PromptTemplates& templates = {}) {
    if (question.empty()) throw std::invalid_argument("render_captioner_prompt: empty question");
    CaptionerPrompt prompt;
    prompt.question = std::string(question);
    prompt.ocr_tokens = ocr_tokens;
    prompt.rendered = templates.captioner_prefix + prompt.question;
    if (!ocr_tokens.empty()) {
        prompt.rendered += templates.ocr_separator;
        for (std::size_t i = 0; i < ocr_tokens.size(); ++i) {
            if (i > 0) prompt.rendered.push_back(' ');
            prompt.rendered += ocr_tokens[i];
        }
    }
    return prompt;
}

// ---------------------------------------------------------------------------
// Example-synthesis prompt: instruction, blank line, then
// "Original contexts: ...\nQuestion: ...\nAnswer: ...\nSummary: ..." blocks
// separated by blank lines. The target block ends at "Summary:" with no
// trailing text, where the model continues.
// ---------------------------------------------------------------------------

struct SynthesisExample {
    std::string contexts;  // reference captions, already flattened to one string
    std::string question;
    std::string answer;
    std::string summary;
};

struct SynthesisTarget {
    std::string contexts;
    std::string question;
    std::string answer;
};

struct SynthesisPrompt {
    std::string instruction;
    std::vector<SynthesisExample> human_examples;
    SynthesisTarget target;
    std::string rendered;
};

// Reference captions are flattened into the "Original contexts" field by
// joining with single spaces, punctuation untouched.
inline std::string join_captions(const std::vector<std::string>& captions) {
    std::string out;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += captions[i];
    }
    return out;
}

// `expected_examples` guards against truncated seed files; pass a negative
// value to accept any count.
inline SynthesisPrompt render_synthesis_prompt(const std::vector<SynthesisExample>& human_examples,
                                               const SynthesisTarget& target,
                                               const PromptTemplates& templates = {},
                                               int expected_examples = 20) {
    if (expected_examples >= 0 && static_cast<int>(human_examples.size()) != expected_examples) {
        throw Error("render_synthesis_prompt: expected " + std::to_string(expected_examples) +
                    " human examples, got " + std::to_string(human_examples.size()));
    }
    if (target.contexts.empty())
        throw Error("render_synthesis_prompt: target has no reference captions");
    if (target.question.empty() || target.answer.empty())
        throw Error("render_synthesis_prompt: target question/answer missing");

    SynthesisPrompt prompt;
    prompt.instruction = templates.synthesis_instruction;
    prompt.human_examples = human_examples;
    prompt.target = target;

    std::string& out = prompt.rendered;
    out = prompt.instruction;
    out += "\n\n";
    for (const auto& ex : human_examples) {
        out += "Original contexts: " + ex.contexts + "\n";
        out += "Question: " + ex.question + "\n";
        out += "Answer: " + ex.answer + "\n";
        out += "Summary: " + ex.summary + "\n\n";
    }
    out += "Original contexts: " + target.contexts + "\n";
    out += "Question: " + target.question + "\n";
    out += "Answer: " + target.answer + "\n";
    out += "Summary:";
    return prompt;
}

// Seed example file: a JSON array of {contexts, question, answer, summary}.
inline std::vector<SynthesisExample> load_seed_examples(const std::filesystem::path& path) {
    const json doc = load_json_file(path);
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array of seed examples");
    std::vector<SynthesisExample> out;
    out.reserve(doc.size());
    for (const auto& entry : doc) {
        out.push_back({entry.at("contexts").get<std::string>(), entry.at("question").get<std::string>(),
                       entry.at("answer").get<std::string>(), entry.at("summary").get<std::string>()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// In-context QA prompt: instruction, blank line, then
// "===\nContext: <c>\n===\nQ: <q>\nA: <a>" blocks separated by blank lines;
// the test block ends at "A:".
// ---------------------------------------------------------------------------

struct IclExample {
    std::string context;  // caption
    std::string question;
    std::string answer;
};

struct IclPrompt {
    std::string instruction;
    std::vector<IclExample> examples;
    std::string test_context;
    std::string test_question;
    std::string rendered;
};

inline IclPrompt render_icl_prompt(const std::vector<IclExample>& examples, std::string_view test_context,
                                   std::string_view test_question, const PromptTemplates& templates = {}) {
    if (test_context.empty() || test_question.empty())
        throw std::invalid_argument("render_icl_prompt: test context/question missing");
    for (const auto& ex : examples) {
        if (ex.context.empty() || ex.question.empty() || ex.answer.empty())
            throw std::invalid_argument("render_icl_prompt: example with empty field");
    }
    IclPrompt prompt;
    prompt.instruction = templates.icl_instruction;
    prompt.examples = examples;
    prompt.test_context = std::string(test_context);
    prompt.test_question = std::string(test_question);

    std::string& out = prompt.rendered;
    out = prompt.instruction;
    out += "\n\n";
    for (const auto& ex : examples) {
        out += "===\nContext: " + ex.context + "\n===\nQ: " + ex.question + "\nA: " + ex.answer + "\n\n";
    }
    out += "===\nContext: ";
    out += test_context;
    out += "\n===\nQ: ";
    out += test_question;
    out += "\nA:";
    return prompt;
}

// ---------------------------------------------------------------------------
// Parsers. Rendering is injective as long as fields stay single-line and
// free of the block separators, so a rendered prompt parses back exactly.
// Used for prompt audits and round-trip checks.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find("\n\n", pos);
        if (next == std::string_view::npos) {
            out.emplace_back(text.substr(pos));
            break;
        }
        out.emplace_back(text.substr(pos, next - pos));
        pos = next + 2;
    }
    return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find('\n', pos);
        if (next == std::string_view::npos) {
            out.emplace_back(text.substr(pos));
            break;
        }
        out.emplace_back(text.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

inline std::string expect_prefix(const std::string& line, std::string_view prefix, std::string_view what) {
    if (!line.starts_with(prefix))
        throw ParseError(std::string("prompt parse: expected line starting with '") + std::string(prefix) +
                         "' in " + std::string(what));
    return line.substr(prefix.size());
}

}  // namespace detail

inline IclPrompt parse_icl_prompt(std::string_view rendered) {
    auto paragraphs = detail::split_paragraphs(rendered);
    if (paragraphs.size() < 2) throw ParseError("prompt parse: not an in-context QA prompt");
    IclPrompt prompt;
    prompt.instruction = paragraphs.front();
    for (std::size_t i = 1; i < paragraphs.size(); ++i) {
        auto lines = detail::split_lines(paragraphs[i]);
        const bool is_test = i + 1 == paragraphs.size();
        if (lines.size() != 5 || lines[0] != "===" || lines[2] != "===")
            throw ParseError("prompt parse: malformed QA block");
        std::string context = detail::expect_prefix(lines[1], "Context: ", "QA block");
        std::string question = detail::expect_prefix(lines[3], "Q: ", "QA block");
        if (is_test) {
            if (lines[4] != "A:") throw ParseError("prompt parse: test block must end with 'A:'");
            prompt.test_context = std::move(context);
            prompt.test_question = std::move(question);
        } else {
            prompt.examples.push_back(
                {std::move(context), std::move(question), detail::expect_prefix(lines[4], "A: ", "QA block")});
        }
    }
    prompt.rendered = std::string(rendered);
    return prompt;
}

inline SynthesisPrompt parse_synthesis_prompt(std::string_view rendered) {
    auto paragraphs = detail::split_paragraphs(rendered);
    if (paragraphs.size() < 2) throw ParseError("prompt parse: not a synthesis prompt");
    SynthesisPrompt prompt;
    prompt.instruction = paragraphs.front();
    for (std::size_t i = 1; i < paragraphs.size(); ++i) {
        auto lines = detail::split_lines(paragraphs[i]);
        const bool is_target = i + 1 == paragraphs.size();
        if (lines.size() != 4) throw ParseError("prompt parse: malformed synthesis block");
        std::string contexts = detail::expect_prefix(lines[0], "Original contexts: ", "synthesis block");
        std::string question = detail::expect_prefix(lines[1], "Question: ", "synthesis block");
        std::string answer = detail::expect_prefix(lines[2], "Answer: ", "synthesis block");
        if (is_target) {
            if (lines[3] != "Summary:")
                throw ParseError("prompt parse: target block must end with 'Summary:'");
            prompt.target = {std::move(contexts), std::move(question), std::move(answer)};
        } else {
            prompt.human_examples.push_back({std::move(contexts), std::move(question), std::move(answer),
                                             detail::expect_prefix(lines[3], "Summary: ", "synthesis block")});
        }
    }
    prompt.rendered = std::string(rendered);
    return prompt;
}

}  // namespace vqacap::prompts
