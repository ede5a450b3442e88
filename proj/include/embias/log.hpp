#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace embias {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

namespace detail {

inline LogLevel parse_log_level(const char* value) {
    if (value == nullptr) return LogLevel::warn;
    std::string_view v(value);
    if (v == "error") return LogLevel::error;
    if (v == "warn") return LogLevel::warn;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

}  // namespace detail

/// Threshold read once from EMBIAS_LOG (error|warn|info|debug, default warn).
inline LogLevel log_level() {
    static const LogLevel level = detail::parse_log_level(std::getenv("EMBIAS_LOG"));
    return level;
}

inline void log(LogLevel level, std::string_view message) {
    if (level > log_level()) return;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    static std::mutex mutex;
    const std::lock_guard<std::mutex> lock(mutex);
    std::cerr << "[embias][" << names[static_cast<int>(level)] << "] " << message << '\n';
}

inline void log_error(std::string_view m) { log(LogLevel::error, m); }
inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }
inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_debug(std::string_view m) { log(LogLevel::debug, m); }

}  // namespace embias
