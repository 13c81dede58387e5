#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "vqacap/errors.hpp"

namespace vqacap {

using json = nlohmann::json;

// Parses a whole-document JSON file, rethrowing with file name and byte
// offset on failure.
inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what() + " (byte " + std::to_string(e.byte) + ")");
    }
}

// Calls `fn(line_number, parsed)` for every non-empty line. Line numbers are
// 1-based. A malformed line raises ParseError naming file and line.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const json&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            fn(line_no, json::parse(line));
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

// Serializes one JSON value per line. nlohmann::json keeps object keys
// sorted, so output bytes are a pure function of the values.
class JsonlWriter {
  public:
    explicit JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot open " + path.string() + " for writing");
    }

    void write(const json& value) {
        out_ << value.dump() << '\n';
        if (!out_) throw Error("write failure on " + path_.string());
    }

    void close() {
        out_.close();
        if (out_.fail()) throw Error("write failure on " + path_.string());
    }

  private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    JsonlWriter writer(path);
    for (const auto& row : rows) writer.write(row);
    writer.close();
}

}  // namespace vqacap
