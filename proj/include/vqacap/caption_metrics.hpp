#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vqacap/errors.hpp"
#include "vqacap/metrics.hpp"

namespace vqacap::caption_metrics {

// ---------------------------------------------------------------------------
// Tokenization: lowercase, punctuation to spaces (in-word apostrophes kept),
// whitespace split. No article dropping or number-word mapping; captions are
// compared as written.
// ---------------------------------------------------------------------------

inline std::vector<std::string> caption_tokens(std::string_view caption) {
    std::string spaced;
    spaced.reserve(caption.size());
    for (std::size_t i = 0; i < caption.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(caption[i]);
        if (metrics::detail::is_word_char(c)) {
            spaced.push_back(static_cast<char>(std::tolower(c)));
        } else if (c == '\'' && i > 0 && i + 1 < caption.size() &&
                   metrics::detail::is_word_char(static_cast<unsigned char>(caption[i - 1])) &&
                   metrics::detail::is_word_char(static_cast<unsigned char>(caption[i + 1]))) {
            spaced.push_back('\'');
        } else {
            spaced.push_back(' ');
        }
    }
    std::vector<std::string> tokens;
    std::size_t pos = 0;
    while (pos < spaced.size()) {
        while (pos < spaced.size() && spaced[pos] == ' ') ++pos;
        std::size_t end = pos;
        while (end < spaced.size() && spaced[end] != ' ') ++end;
        if (end > pos) tokens.emplace_back(spaced.substr(pos, end - pos));
        pos = end;
    }
    return tokens;
}

namespace detail {

constexpr int kMaxNgram = 4;

// N-grams keyed as tokens joined with '\x1f'; counts per order.
inline std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::unordered_map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int k = 1; k < n; ++k) {
            key.push_back('\x1f');
            key.append(tokens[i + static_cast<std::size_t>(k)]);
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU-4, per instance, no smoothing: modified n-gram precision for
// n = 1..4, geometric mean, brevity penalty against the closest reference
// length (shorter wins ties). Zero whenever any precision is zero.
// ---------------------------------------------------------------------------

inline double bleu4(const std::vector<std::string>& candidate,
                    const std::vector<std::vector<std::string>>& references) {
    if (references.empty()) throw std::invalid_argument("bleu4: no references");
    if (candidate.empty()) return 0.0;

    double log_precision_sum = 0.0;
    for (int n = 1; n <= detail::kMaxNgram; ++n) {
        auto cand = detail::ngram_counts(candidate, n);
        std::size_t total = candidate.size() >= static_cast<std::size_t>(n)
                                ? candidate.size() - static_cast<std::size_t>(n) + 1
                                : 0;
        if (total == 0 || cand.empty()) return 0.0;
        std::unordered_map<std::string, int> max_ref;
        for (const auto& ref : references) {
            for (const auto& [key, count] : detail::ngram_counts(ref, n)) {
                auto& slot = max_ref[key];
                slot = std::max(slot, count);
            }
        }
        long clipped = 0;
        for (const auto& [key, count] : cand) {
            auto it = max_ref.find(key);
            if (it != max_ref.end()) clipped += std::min(count, it->second);
        }
        if (clipped == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }

    const std::size_t c = candidate.size();
    std::size_t r = references.front().size();
    for (const auto& ref : references) {
        const std::size_t len = ref.size();
        const auto diff = [&](std::size_t l) {
            return l > c ? l - c : c - l;
        };
        if (diff(len) < diff(r) || (diff(len) == diff(r) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    return bp * std::exp(log_precision_sum / detail::kMaxNgram);
}

// ---------------------------------------------------------------------------
// CIDEr (plain variant, no length penalty): tf-idf n-gram vectors for
// n = 1..4, cosine against each reference averaged over references and
// orders, scaled to [0, 10]. Document frequencies come from the reference
// corpus the scorer was built over; an n-gram seen in every image weighs
// zero, and a zero-norm vector on either side yields cosine 0.
// ---------------------------------------------------------------------------

class CiderScorer {
  public:
    // `reference_corpus` maps image/record ids to their reference captions.
    explicit CiderScorer(const std::map<std::string, std::vector<std::string>>& reference_corpus) {
        for (const auto& [id, captions] : reference_corpus) {
            std::unordered_map<std::string, int> seen;
            for (const auto& caption : captions) {
                auto tokens = caption_tokens(caption);
                for (int n = 1; n <= detail::kMaxNgram; ++n) {
                    for (const auto& [key, count] : detail::ngram_counts(tokens, n)) {
                        (void)count;
                        seen[key] = 1;
                    }
                }
            }
            for (const auto& [key, one] : seen) {
                (void)one;
                ++document_frequency_[key];
            }
            ++num_images_;
        }
        if (num_images_ == 0) throw std::invalid_argument("CiderScorer: empty reference corpus");
        log_num_images_ = std::log(static_cast<double>(num_images_));
    }

    double idf(const std::string& ngram) const {
        auto it = document_frequency_.find(ngram);
        const double df = it == document_frequency_.end() ? 0.0 : static_cast<double>(it->second);
        return log_num_images_ - std::log(std::max(1.0, df));
    }

    // Scores a candidate caption against one image's references.
    double score(std::string_view candidate, const std::vector<std::string>& references) const {
        if (references.empty()) throw std::invalid_argument("CiderScorer::score: no references");
        const auto cand_tokens = caption_tokens(std::string(candidate));
        double order_sum = 0.0;
        for (int n = 1; n <= detail::kMaxNgram; ++n) {
            const auto cand_vec = tfidf_vector(cand_tokens, n);
            double ref_mean = 0.0;
            for (const auto& ref : references) {
                ref_mean += cosine(cand_vec, tfidf_vector(caption_tokens(ref), n));
            }
            order_sum += ref_mean / static_cast<double>(references.size());
        }
        return 10.0 * order_sum / detail::kMaxNgram;
    }

    std::size_t corpus_size() const { return num_images_; }

  private:
    using Vector = std::unordered_map<std::string, double>;

    Vector tfidf_vector(const std::vector<std::string>& tokens, int n) const {
        Vector vec;
        for (const auto& [key, count] : detail::ngram_counts(tokens, n)) {
            vec[key] = static_cast<double>(count) * idf(key);
        }
        return vec;
    }

    static double cosine(const Vector& a, const Vector& b) {
        double dot = 0.0, norm_a = 0.0, norm_b = 0.0;
        for (const auto& [key, value] : a) {
            norm_a += value * value;
            auto it = b.find(key);
            if (it != b.end()) dot += value * it->second;
        }
        for (const auto& [key, value] : b) {
            (void)key;
            norm_b += value * value;
        }
        if (norm_a <= 0.0 || norm_b <= 0.0) return 0.0;
        return dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
    }

    std::unordered_map<std::string, int> document_frequency_;
    std::size_t num_images_ = 0;
    double log_num_images_ = 0.0;
};

enum class CaptionMetric { bleu4, cider };

// Scores every candidate against its own references. For CIDEr the idf
// statistics come from the full `references` map.
inline metrics::MetricReport caption_similarity(
    const std::vector<std::pair<std::string, std::string>>& candidates,
    const std::map<std::string, std::vector<std::string>>& references, CaptionMetric metric) {
    std::string missing;
    for (const auto& [id, caption] : candidates) {
        (void)caption;
        auto it = references.find(id);
        if (it == references.end() || it->second.empty()) {
            if (!missing.empty()) missing += ", ";
            missing += id;
        }
    }
    if (!missing.empty()) throw CoverageError("caption_similarity: candidates without references: " + missing);
    if (candidates.empty()) throw std::invalid_argument("caption_similarity: no candidates");

    std::vector<metrics::MetricInstance> rows;
    rows.reserve(candidates.size());
    if (metric == CaptionMetric::cider) {
        CiderScorer scorer(references);
        for (const auto& [id, caption] : candidates) {
            rows.push_back({id, scorer.score(caption, references.at(id))});
        }
        return metrics::aggregate(metrics::MetricName::cider, std::move(rows));
    }
    for (const auto& [id, caption] : candidates) {
        std::vector<std::vector<std::string>> ref_tokens;
        for (const auto& ref : references.at(id)) ref_tokens.push_back(caption_tokens(ref));
        rows.push_back({id, bleu4(caption_tokens(caption), ref_tokens)});
    }
    return metrics::aggregate(metrics::MetricName::bleu4, std::move(rows));
}

}  // namespace vqacap::caption_metrics
