#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"
#include "vqacap/log.hpp"

namespace vqacap::corpus {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class Split { train2014, val2014, train2017, val2017, external };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train2014: return "train2014";
        case Split::val2014: return "val2014";
        case Split::train2017: return "train2017";
        case Split::val2017: return "val2017";
        case Split::external: return "external";
    }
    return "external";
}

inline Split split_from_string(std::string_view s) {
    if (s == "train2014") return Split::train2014;
    if (s == "val2014") return Split::val2014;
    if (s == "train2017") return Split::train2017;
    if (s == "val2017") return Split::val2017;
    if (s == "external") return Split::external;
    throw ParseError("unknown split: " + std::string(s));
}

// COCO file names embed the split ("COCO_train2014_...", "val2017/...").
inline std::optional<Split> split_from_file_name(std::string_view file_name) {
    for (Split s : {Split::train2014, Split::val2014, Split::train2017, Split::val2017}) {
        if (file_name.find(to_string(s)) != std::string_view::npos) return s;
    }
    return std::nullopt;
}

struct ImageRef {
    std::string image_id;
    Split split = Split::external;
    std::string uri;  // optional locator (file name or URL)

    json to_json() const {
        json j{{"image_id", image_id}, {"split", std::string(to_string(split))}};
        if (!uri.empty()) j["uri"] = uri;
        return j;
    }

    static ImageRef from_json(const json& j) {
        ImageRef ref;
        ref.image_id = j.at("image_id").get<std::string>();
        ref.split = split_from_string(j.at("split").get<std::string>());
        if (j.contains("uri")) ref.uri = j.at("uri").get<std::string>();
        if (ref.image_id.empty()) throw ParseError("ImageRef with empty image_id");
        return ref;
    }
};

struct CaptionSet {
    ImageRef image;
    std::vector<std::string> captions;

    json to_json() const {
        return json{{"image", image.to_json()}, {"captions", captions}};
    }

    static CaptionSet from_json(const json& j) {
        CaptionSet set;
        set.image = ImageRef::from_json(j.at("image"));
        set.captions = j.at("captions").get<std::vector<std::string>>();
        return set;
    }
};

// One (image, question, answers) unit, optionally joined with reference
// captions, OCR tokens, and multiple-choice options.
struct VqaRecord {
    std::string record_id;
    ImageRef image;
    std::string question;
    std::vector<std::string> answers;
    std::vector<std::string> ocr_tokens;
    std::optional<CaptionSet> reference_captions;
    std::vector<std::string> choices;  // multiple-choice tasks only

    json to_json() const {
        json j{{"record_id", record_id},
               {"image", image.to_json()},
               {"question", question},
               {"answers", answers}};
        if (!ocr_tokens.empty()) j["ocr_tokens"] = ocr_tokens;
        if (reference_captions) j["reference_captions"] = reference_captions->to_json();
        if (!choices.empty()) j["choices"] = choices;
        return j;
    }

    static VqaRecord from_json(const json& j) {
        VqaRecord rec;
        rec.record_id = j.at("record_id").get<std::string>();
        rec.image = ImageRef::from_json(j.at("image"));
        rec.question = j.at("question").get<std::string>();
        rec.answers = j.at("answers").get<std::vector<std::string>>();
        if (j.contains("ocr_tokens")) rec.ocr_tokens = j.at("ocr_tokens").get<std::vector<std::string>>();
        if (j.contains("reference_captions"))
            rec.reference_captions = CaptionSet::from_json(j.at("reference_captions"));
        if (j.contains("choices")) rec.choices = j.at("choices").get<std::vector<std::string>>();
        if (rec.record_id.empty() || rec.question.empty() || rec.answers.empty())
            throw ParseError("VqaRecord " + rec.record_id + ": missing required fields");
        return rec;
    }
};

// Most frequent answer; ties go to the earliest occurrence. Used as the
// single-answer view of a record (synthesis targets, ICL example answers).
inline const std::string& modal_answer(const VqaRecord& record) {
    if (record.answers.empty()) throw Error("modal_answer: record " + record.record_id + " has no answers");
    std::size_t best = 0, best_count = 0;
    for (std::size_t i = 0; i < record.answers.size(); ++i) {
        std::size_t count = 0;
        for (const auto& other : record.answers) {
            if (other == record.answers[i]) ++count;
        }
        if (count > best_count) {
            best = i;
            best_count = count;
        }
    }
    return record.answers[best];
}

namespace detail {

inline std::string id_to_string(const json& id) {
    if (id.is_string()) return id.get<std::string>();
    if (id.is_number_integer()) return std::to_string(id.get<long long>());
    if (id.is_number_unsigned()) return std::to_string(id.get<unsigned long long>());
    throw ParseError("id field must be a string or integer, got: " + id.dump());
}

inline std::string trimmed(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct CocoCaptionOptions {
    // Strict mode keeps exactly five captions per image (extra ones are
    // dropped in file order) and excludes images with fewer, matching COCO.
    // Non-strict mode keeps all captions and requires only `min_captions`.
    bool strict_five = true;
    std::size_t min_captions = 1;
};

// Reads a COCO-style caption annotation document:
//   {"images": [{"id", "file_name", "split"?}], "annotations": [{"image_id", "caption"}]}
// Captions are preserved verbatim and kept in file order.
inline std::map<std::string, CaptionSet> load_coco_captions(const std::filesystem::path& path,
                                                            const CocoCaptionOptions& options = {}) {
    const json doc = load_json_file(path);
    if (!doc.is_object() || !doc.contains("annotations"))
        throw ParseError(path.string() + ": expected an object with an 'annotations' list");

    std::unordered_map<std::string, ImageRef> images;
    if (doc.contains("images")) {
        for (const auto& img : doc.at("images")) {
            ImageRef ref;
            ref.image_id = detail::id_to_string(img.at("id"));
            if (img.contains("file_name")) ref.uri = img.at("file_name").get<std::string>();
            if (img.contains("split")) {
                ref.split = split_from_string(img.at("split").get<std::string>());
            } else if (auto s = split_from_file_name(ref.uri)) {
                ref.split = *s;
            }
            images[ref.image_id] = std::move(ref);
        }
    }

    std::map<std::string, CaptionSet> out;
    for (const auto& ann : doc.at("annotations")) {
        const std::string image_id = detail::id_to_string(ann.at("image_id"));
        const std::string caption = ann.at("caption").get<std::string>();
        if (detail::trimmed(caption).empty()) {
            log::warn("load_coco_captions: empty caption for image " + image_id + ", skipped");
            continue;
        }
        auto& set = out[image_id];
        if (set.image.image_id.empty()) {
            auto it = images.find(image_id);
            set.image = it != images.end() ? it->second : ImageRef{image_id, Split::external, ""};
        }
        set.captions.push_back(caption);
    }

    for (auto it = out.begin(); it != out.end();) {
        auto& set = it->second;
        if (options.strict_five) {
            if (set.captions.size() < 5) {
                log::warn("load_coco_captions: image " + it->first + " has " +
                          std::to_string(set.captions.size()) + " captions, excluded (strict-5)");
                it = out.erase(it);
                continue;
            }
            set.captions.resize(5);
        } else if (set.captions.size() < options.min_captions) {
            log::warn("load_coco_captions: image " + it->first + " has " +
                      std::to_string(set.captions.size()) + " captions, excluded (min " +
                      std::to_string(options.min_captions) + ")");
            it = out.erase(it);
            continue;
        }
        ++it;
    }
    return out;
}

// Reads a VQA-style question/annotation pair:
//   questions:   {"questions": [{"question_id", "image_id", "question",
//                                "ocr_tokens"?, "choices"?, "split"?}]}
//   annotations: {"annotations": [{"question_id", "answers": [{"answer"} | "..."]}]}
// Every question must have exactly one annotation. Output is sorted by
// record_id so downstream stages are deterministic.
inline std::vector<VqaRecord> load_vqa(const std::filesystem::path& questions_path,
                                       const std::filesystem::path& annotations_path) {
    const json qdoc = load_json_file(questions_path);
    const json adoc = load_json_file(annotations_path);
    if (!qdoc.contains("questions"))
        throw ParseError(questions_path.string() + ": expected a 'questions' list");
    if (!adoc.contains("annotations"))
        throw ParseError(annotations_path.string() + ": expected an 'annotations' list");

    std::unordered_map<std::string, std::vector<std::string>> answers_by_id;
    for (const auto& ann : adoc.at("annotations")) {
        const std::string qid = detail::id_to_string(ann.at("question_id"));
        std::vector<std::string> answers;
        for (const auto& a : ann.at("answers")) {
            answers.push_back(a.is_string() ? a.get<std::string>() : a.at("answer").get<std::string>());
        }
        if (!answers_by_id.emplace(qid, std::move(answers)).second)
            throw ParseError(annotations_path.string() + ": duplicate annotation for question id " + qid);
    }

    std::vector<VqaRecord> records;
    std::unordered_set<std::string> seen;
    std::string missing;
    for (const auto& q : qdoc.at("questions")) {
        VqaRecord rec;
        rec.record_id = detail::id_to_string(q.at("question_id"));
        if (!seen.insert(rec.record_id).second)
            throw ParseError(questions_path.string() + ": duplicate question id " + rec.record_id);
        rec.image.image_id = detail::id_to_string(q.at("image_id"));
        if (q.contains("split")) rec.image.split = split_from_string(q.at("split").get<std::string>());
        rec.question = q.at("question").get<std::string>();
        if (rec.question.empty()) throw ParseError("question " + rec.record_id + " is empty");
        if (q.contains("ocr_tokens")) rec.ocr_tokens = q.at("ocr_tokens").get<std::vector<std::string>>();
        if (q.contains("choices")) rec.choices = q.at("choices").get<std::vector<std::string>>();
        auto it = answers_by_id.find(rec.record_id);
        if (it == answers_by_id.end()) {
            if (!missing.empty()) missing += ", ";
            missing += rec.record_id;
            continue;
        }
        if (it->second.empty()) throw ParseError("annotation for question " + rec.record_id + " has no answers");
        rec.answers = it->second;
        records.push_back(std::move(rec));
    }
    if (!missing.empty())
        throw CoverageError("load_vqa: questions without annotations: " + missing);

    std::sort(records.begin(), records.end(),
              [](const VqaRecord& a, const VqaRecord& b) { return a.record_id < b.record_id; });
    return records;
}

// ---------------------------------------------------------------------------
// Join + split guard
// ---------------------------------------------------------------------------

struct JoinResult {
    std::vector<VqaRecord> records;
    std::size_t excluded = 0;  // records dropped by the split guard
};

// Attaches reference captions by image id and drops records whose image
// split is not allowed. Question/answer text is never touched. Keeping
// validation-split images out of synthesized training data is what prevents
// train/test leakage, so the guard runs before any synthesis.
inline JoinResult join_and_guard(std::vector<VqaRecord> records,
                                 const std::map<std::string, CaptionSet>& caption_sets,
                                 const std::set<Split>& allowed_splits) {
    JoinResult result;
    result.records.reserve(records.size());
    for (auto& rec : records) {
        auto it = caption_sets.find(rec.image.image_id);
        if (it != caption_sets.end()) {
            rec.image = it->second.image;
            rec.reference_captions = it->second;
        }
        if (allowed_splits.count(rec.image.split) == 0) {
            ++result.excluded;
            continue;
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

inline std::set<Split> all_splits() {
    return {Split::train2014, Split::val2014, Split::train2017, Split::val2017, Split::external};
}

// ---------------------------------------------------------------------------
// Canonical corpus format: one VqaRecord per line, UTF-8 JSONL.
// ---------------------------------------------------------------------------

inline void save_corpus(const std::vector<VqaRecord>& records, const std::filesystem::path& path) {
    JsonlWriter writer(path);
    for (const auto& rec : records) writer.write(rec.to_json());
    writer.close();
}

inline std::vector<VqaRecord> load_corpus(const std::filesystem::path& path) {
    std::vector<VqaRecord> records;
    for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
        try {
            records.push_back(VqaRecord::from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    return records;
}

}  // namespace vqacap::corpus
