#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::retrieval {

// Question/image embedding pair for one record. The encoder that produced
// the vectors is provider metadata; this module only consumes them.
struct EmbeddingRecord {
    std::string record_id;
    std::vector<double> question_vec;
    std::vector<double> image_vec;

    json to_json() const {
        return json{{"record_id", record_id}, {"question_vec", question_vec}, {"image_vec", image_vec}};
    }

    static EmbeddingRecord from_json(const json& j) {
        EmbeddingRecord rec;
        rec.record_id = j.at("record_id").get<std::string>();
        rec.question_vec = j.at("question_vec").get<std::vector<double>>();
        rec.image_vec = j.at("image_vec").get<std::vector<double>>();
        return rec;
    }
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

inline double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw Error("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace detail

// Summed cosine similarity of the question vectors and the image vectors.
inline double pair_similarity(const EmbeddingRecord& a, const EmbeddingRecord& b) {
    return detail::cosine(a.question_vec, b.question_vec) + detail::cosine(a.image_vec, b.image_vec);
}

// Immutable, validated collection of embeddings with a fixed dimension.
// Records are kept sorted by record_id so every scan order is deterministic.
class EmbeddingPool {
  public:
    EmbeddingPool() = default;

    static EmbeddingPool from_records(std::vector<EmbeddingRecord> records) {
        EmbeddingPool pool;
        std::sort(records.begin(), records.end(),
                  [](const EmbeddingRecord& a, const EmbeddingRecord& b) { return a.record_id < b.record_id; });
        for (auto& rec : records) {
            pool.validate(rec);
            if (!pool.index_.emplace(rec.record_id, pool.records_.size()).second)
                throw Error("embeddings: duplicate record_id " + rec.record_id);
            pool.records_.push_back(std::move(rec));
        }
        return pool;
    }

    static EmbeddingPool load(const std::filesystem::path& path) {
        std::vector<EmbeddingRecord> records;
        for_each_jsonl(path, [&](std::size_t line_no, const json& j) {
            try {
                records.push_back(EmbeddingRecord::from_json(j));
            } catch (const json::exception& e) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        });
        return from_records(std::move(records));
    }

    void save(const std::filesystem::path& path) const {
        JsonlWriter writer(path);
        for (const auto& rec : records_) writer.write(rec.to_json());
        writer.close();
    }

    const EmbeddingRecord* find(const std::string& record_id) const {
        auto it = index_.find(record_id);
        return it == index_.end() ? nullptr : &records_[it->second];
    }

    const EmbeddingRecord& at(const std::string& record_id) const {
        const EmbeddingRecord* rec = find(record_id);
        if (rec == nullptr) throw CoverageError("embeddings: no record " + record_id);
        return *rec;
    }

    const std::vector<EmbeddingRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    std::size_t dimension() const { return dim_; }

  private:
    void validate(const EmbeddingRecord& rec) {
        if (rec.record_id.empty()) throw Error("embeddings: record with empty record_id");
        for (const auto* vec : {&rec.question_vec, &rec.image_vec}) {
            if (vec->empty()) throw Error("embeddings: record " + rec.record_id + " has an empty vector");
            for (double x : *vec) {
                if (!std::isfinite(x))
                    throw Error("embeddings: record " + rec.record_id + " has a non-finite entry");
            }
            if (detail::norm(*vec) == 0.0)
                throw Error("embeddings: record " + rec.record_id + " has a zero-norm vector");
        }
        if (rec.question_vec.size() != rec.image_vec.size())
            throw Error("embeddings: record " + rec.record_id + " mixes dimensions " +
                        std::to_string(rec.question_vec.size()) + " and " + std::to_string(rec.image_vec.size()));
        if (dim_ == 0) {
            dim_ = rec.question_vec.size();
        } else if (rec.question_vec.size() != dim_) {
            throw Error("embeddings: record " + rec.record_id + " has dimension " +
                        std::to_string(rec.question_vec.size()) + ", pool has " + std::to_string(dim_));
        }
    }

    std::vector<EmbeddingRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t dim_ = 0;
};

struct ScoredId {
    std::string record_id;
    double score = 0.0;
};

// The n most similar pool entries, highest first; ties broken by ascending
// record_id. The query's own record_id is never returned. Exact scan: pools
// here are small enough that nothing approximate is warranted.
inline std::vector<ScoredId> top_n(const EmbeddingRecord& query, const EmbeddingPool& pool, std::size_t n) {
    if (n == 0) throw Error("top_n: n must be >= 1");
    if (pool.empty()) throw Error("top_n: empty pool");
    std::vector<ScoredId> scored;
    scored.reserve(pool.size());
    for (const auto& rec : pool.records()) {
        if (rec.record_id == query.record_id) continue;
        scored.push_back({rec.record_id, pair_similarity(query, rec)});
    }
    if (scored.empty()) throw Error("top_n: pool contains only the query record");
    const auto better = [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.record_id < b.record_id;
    };
    if (scored.size() > n) {
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
        scored.resize(n);
    } else {
        std::sort(scored.begin(), scored.end(), better);
    }
    return scored;
}

// Dot-product fast path over pre-normalized copies. Selection must agree
// with top_n; the normalized layout just saves the per-query norm work.
class CosineIndex {
  public:
    explicit CosineIndex(const EmbeddingPool& pool) : pool_(pool) {
        normalized_.reserve(pool.records().size());
        for (const auto& rec : pool.records()) {
            Normalized n;
            n.question = scale(rec.question_vec, 1.0 / detail::norm(rec.question_vec));
            n.image = scale(rec.image_vec, 1.0 / detail::norm(rec.image_vec));
            normalized_.push_back(std::move(n));
        }
    }

    std::vector<ScoredId> top_n(const EmbeddingRecord& query, std::size_t n) const {
        if (n == 0) throw Error("top_n: n must be >= 1");
        if (pool_.empty()) throw Error("top_n: empty pool");
        const auto nq = scale(query.question_vec, 1.0 / detail::norm(query.question_vec));
        const auto ni = scale(query.image_vec, 1.0 / detail::norm(query.image_vec));
        std::vector<ScoredId> scored;
        scored.reserve(pool_.size());
        const auto& records = pool_.records();
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].record_id == query.record_id) continue;
            if (records[i].question_vec.size() != nq.size())
                throw Error("top_n: query dimension " + std::to_string(nq.size()) + " does not match pool");
            scored.push_back(
                {records[i].record_id, detail::dot(nq, normalized_[i].question) + detail::dot(ni, normalized_[i].image)});
        }
        if (scored.empty()) throw Error("top_n: pool contains only the query record");
        const auto better = [](const ScoredId& a, const ScoredId& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.record_id < b.record_id;
        };
        if (scored.size() > n) {
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
            scored.resize(n);
        } else {
            std::sort(scored.begin(), scored.end(), better);
        }
        return scored;
    }

  private:
    struct Normalized {
        std::vector<double> question;
        std::vector<double> image;
    };

    static std::vector<double> scale(const std::vector<double>& v, double factor) {
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factor;
        return out;
    }

    const EmbeddingPool& pool_;
    std::vector<Normalized> normalized_;
};

}  // namespace vqacap::retrieval
