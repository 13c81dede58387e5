#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::metrics {

// ---------------------------------------------------------------------------
// Answer normalization
//
// Applied to predicted and ground-truth answers before any comparison.
// Rules, in order:
//   1. lowercase (ASCII); bytes >= 0x80 pass through untouched
//   2. punctuation becomes a space, except an apostrophe between two
//      word characters, which is kept
//   3. tokens "a", "an", "the" are dropped
//   4. the number words zero..ten map to digits
//   5. whitespace collapses to single spaces, ends trimmed
// The function is idempotent.
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

inline const std::unordered_map<std::string_view, std::string_view>& number_words() {
    static const std::unordered_map<std::string_view, std::string_view> map = {
        {"zero", "0"}, {"one", "1"}, {"two", "2"},  {"three", "3"}, {"four", "4"}, {"five", "5"},
        {"six", "6"},  {"seven", "7"}, {"eight", "8"}, {"nine", "9"}, {"ten", "10"},
    };
    return map;
}

}  // namespace detail

inline std::string normalize_answer(std::string_view raw) {
    std::string spaced;
    spaced.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(raw[i]);
        if (detail::is_word_char(c)) {
            spaced.push_back(static_cast<char>(std::tolower(c)));
        } else if (c == '\'' && i > 0 && i + 1 < raw.size() &&
                   detail::is_word_char(static_cast<unsigned char>(raw[i - 1])) &&
                   detail::is_word_char(static_cast<unsigned char>(raw[i + 1]))) {
            spaced.push_back('\'');
        } else {
            spaced.push_back(' ');
        }
    }

    std::string out;
    out.reserve(spaced.size());
    std::size_t pos = 0;
    while (pos < spaced.size()) {
        while (pos < spaced.size() && spaced[pos] == ' ') ++pos;
        std::size_t end = pos;
        while (end < spaced.size() && spaced[end] != ' ') ++end;
        if (end > pos) {
            std::string_view token(spaced.data() + pos, end - pos);
            if (token != "a" && token != "an" && token != "the") {
                auto it = detail::number_words().find(token);
                if (it != detail::number_words().end()) token = it->second;
                if (!out.empty()) out.push_back(' ');
                out.append(token);
            }
        }
        pos = end;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Character error rate
// ---------------------------------------------------------------------------

namespace detail {

// Permissive UTF-8 decode; an invalid byte stands for itself.
inline std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t extra = 0;
        char32_t cp = c;
        if (c >= 0xF0)
            extra = 3, cp = c & 0x07;
        else if (c >= 0xE0)
            extra = 2, cp = c & 0x0F;
        else if (c >= 0xC0)
            extra = 1, cp = c & 0x1F;
        if (extra > 0 && i + extra < s.size()) {
            bool valid = true;
            for (std::size_t k = 1; k <= extra; ++k) {
                unsigned char cc = static_cast<unsigned char>(s[i + k]);
                if ((cc & 0xC0) != 0x80) {
                    valid = false;
                    break;
                }
                cp = (cp << 6) | (cc & 0x3F);
            }
            if (valid) {
                out.push_back(cp);
                i += extra + 1;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

// Unit-cost Levenshtein distance, two-row DP.
inline std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
    if (a.empty()) return b.size();
    if (b.empty()) return a.size();
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

// Character-level edit distance divided by the ground-truth length, measured
// in Unicode code points. Expects already-normalized inputs. An empty ground
// truth counts as length 1, so the rate equals the full prediction length
// (and 0 when the prediction is empty too). May exceed 1.
inline double char_error_rate(std::string_view pred, std::string_view gt) {
    const std::u32string p = detail::decode_utf8(pred);
    const std::u32string g = detail::decode_utf8(gt);
    if (g.empty()) return static_cast<double>(p.size());
    return static_cast<double>(detail::levenshtein(p, g)) / static_cast<double>(g.size());
}

// ---------------------------------------------------------------------------
// VQA accuracies
// ---------------------------------------------------------------------------

enum class SoftAccuracyMode {
    distinct_indices,  // three distinct ground-truth indices (default)
    allow_repetition,  // degenerates to the single best agreement
};

// Mean of the three best max(0, 1 - CER) agreements between the prediction
// and the ground-truth answers; the mean of all of them when fewer than
// three exist. Both sides are normalized internally.
inline double soft_vqa_accuracy(std::string_view pred, const std::vector<std::string>& gts,
                                SoftAccuracyMode mode = SoftAccuracyMode::distinct_indices) {
    if (gts.empty()) throw std::invalid_argument("soft_vqa_accuracy: ground-truth list is empty");
    const std::string p = normalize_answer(pred);
    std::vector<double> scores;
    scores.reserve(gts.size());
    for (const auto& gt : gts) {
        scores.push_back(std::max(0.0, 1.0 - char_error_rate(p, normalize_answer(gt))));
    }
    if (mode == SoftAccuracyMode::allow_repetition) {
        return *std::max_element(scores.begin(), scores.end());
    }
    const std::size_t k = std::min<std::size_t>(3, scores.size());
    std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), scores.end(),
                      std::greater<double>());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += scores[i];
    return sum / static_cast<double>(k);
}

// The VQAv2 convention: min(#exact matches / 3, 1), on normalized answers.
inline double standard_vqa_accuracy(std::string_view pred, const std::vector<std::string>& gts) {
    if (gts.empty()) throw std::invalid_argument("standard_vqa_accuracy: ground-truth list is empty");
    const std::string p = normalize_answer(pred);
    std::size_t matches = 0;
    for (const auto& gt : gts) {
        if (normalize_answer(gt) == p) ++matches;
    }
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

// Fraction of keywords whose normalized form appears as a substring of the
// normalized answer.
inline double keyword_accuracy(std::string_view answer, const std::vector<std::string>& keywords) {
    if (keywords.empty()) throw std::invalid_argument("keyword_accuracy: keyword list is empty");
    const std::string a = normalize_answer(answer);
    std::size_t hits = 0;
    for (const auto& kw : keywords) {
        if (a.find(normalize_answer(kw)) != std::string::npos) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(keywords.size());
}

// ---------------------------------------------------------------------------
// Metric reports
// ---------------------------------------------------------------------------

enum class MetricName {
    soft_vqa_accuracy,
    standard_vqa_accuracy,
    multiple_choice_accuracy,
    keyword_accuracy,
    bleu4,
    cider,
};

inline std::string_view to_string(MetricName m) {
    switch (m) {
        case MetricName::soft_vqa_accuracy: return "soft_vqa_accuracy";
        case MetricName::standard_vqa_accuracy: return "standard_vqa_accuracy";
        case MetricName::multiple_choice_accuracy: return "multiple_choice_accuracy";
        case MetricName::keyword_accuracy: return "keyword_accuracy";
        case MetricName::bleu4: return "bleu4";
        case MetricName::cider: return "cider";
    }
    return "unknown";
}

inline MetricName metric_from_string(std::string_view s) {
    for (MetricName m : {MetricName::soft_vqa_accuracy, MetricName::standard_vqa_accuracy,
                         MetricName::multiple_choice_accuracy, MetricName::keyword_accuracy, MetricName::bleu4,
                         MetricName::cider}) {
        if (s == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown metric: " + std::string(s));
}

struct MetricInstance {
    std::string record_id;
    double score = 0.0;
};

struct MetricReport {
    MetricName metric{};
    std::vector<MetricInstance> per_instance;  // sorted by record_id
    double aggregate = 0.0;                    // arithmetic mean of per_instance
    std::size_t count = 0;

    json to_json() const {
        json rows = json::array();
        for (const auto& row : per_instance) rows.push_back({{"record_id", row.record_id}, {"score", row.score}});
        return json{{"metric_name", std::string(to_string(metric))},
                    {"aggregate", aggregate},
                    {"count", count},
                    {"per_instance", rows}};
    }
};

namespace detail {

// Kahan compensated summation; keeps thousand-instance means stable.
inline double stable_mean(const std::vector<MetricInstance>& rows) {
    double sum = 0.0, comp = 0.0;
    for (const auto& row : rows) {
        double y = row.score - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return sum / static_cast<double>(rows.size());
}

}  // namespace detail

// Sorts instances by record_id and computes the arithmetic-mean aggregate.
inline MetricReport aggregate(MetricName metric, std::vector<MetricInstance> rows) {
    if (rows.empty()) throw std::invalid_argument("aggregate: no instances");
    std::stable_sort(rows.begin(), rows.end(),
                     [](const MetricInstance& a, const MetricInstance& b) { return a.record_id < b.record_id; });
    MetricReport report;
    report.metric = metric;
    report.count = rows.size();
    report.aggregate = detail::stable_mean(rows);
    report.per_instance = std::move(rows);
    return report;
}

}  // namespace vqacap::metrics
