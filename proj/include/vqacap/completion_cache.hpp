#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>

#include "vqacap/completion.hpp"
#include "vqacap/errors.hpp"
#include "vqacap/jsonl.hpp"

namespace vqacap::completion {

// Disk cache for completion responses: one JSON file per request digest.
// Writes go through a temp file + rename so readers never observe a partial
// entry; a process-local mutex serializes writers.
class ResponseCache {
  public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::optional<CompletionResponse> load(const std::string& key) const {
        const auto path = entry_path(key);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return std::nullopt;
        try {
            auto resp = CompletionResponse::from_json(load_json_file(path));
            resp.cached = true;
            return resp;
        } catch (const Error&) {
            // A corrupt entry is treated as a miss; the rewrite will fix it.
            return std::nullopt;
        }
    }

    void store(const std::string& key, const CompletionResponse& response) {
        static std::atomic<unsigned> counter{0};
        const auto path = entry_path(key);
        const auto tmp = path.string() + ".tmp" + std::to_string(counter.fetch_add(1));
        std::lock_guard lock(write_mutex_);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cache: cannot write " + tmp);
            out << response.to_json().dump(2) << '\n';
            if (!out.flush()) throw Error("cache: write failed for " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    const std::filesystem::path& dir() const { return dir_; }

  private:
    std::filesystem::path entry_path(const std::string& key) const { return dir_ / (key + ".json"); }

    std::filesystem::path dir_;
    std::mutex write_mutex_;
};

}  // namespace vqacap::completion
