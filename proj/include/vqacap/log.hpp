#pragma once

#include <atomic>
#include <cstdio>
#include <mutex>
#include <string>
#include <string_view>

namespace vqacap::log {

enum class Level : int { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
    static std::atomic<Level> level{Level::info};
    return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline void emit(Level level, std::string_view msg) {
    if (level < threshold().load()) return;
    static std::mutex mu;
    const char* tag = level == Level::debug  ? "debug"
                      : level == Level::info ? "info"
                      : level == Level::warn ? "warn"
                                             : "error";
    std::lock_guard<std::mutex> lock(mu);
    std::fprintf(stderr, "[%s] %.*s\n", tag, static_cast<int>(msg.size()), msg.data());
}

inline void debug(std::string_view msg) { emit(Level::debug, msg); }
inline void info(std::string_view msg) { emit(Level::info, msg); }
inline void warn(std::string_view msg) { emit(Level::warn, msg); }
inline void error(std::string_view msg) { emit(Level::error, msg); }

}  // namespace vqacap::log
