#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace detectleak {

enum class LogLevel { debug, info, warn, error, off };

void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes one JSON object per line to stderr:
/// `{"ts": ..., "level": ..., "event": ..., <fields>}`.
void log_event(LogLevel level, std::string_view event, const nlohmann::json& fields = {});

inline void log_info(std::string_view event, const nlohmann::json& fields = {}) {
    log_event(LogLevel::info, event, fields);
}
inline void log_warn(std::string_view event, const nlohmann::json& fields = {}) {
    log_event(LogLevel::warn, event, fields);
}

/// Current UTC time as an ISO-8601 string with millisecond precision.
std::string utc_timestamp();

}  // namespace detectleak
