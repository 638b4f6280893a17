#pragma once

#include <functional>
#include <string_view>

namespace resmpc {

enum class LogLevel { Debug, Info, Warning, Error, Off };

// Process-wide sink. The default writes warnings and errors to std::clog.
void set_log_level(LogLevel level);
LogLevel log_level();
void set_log_sink(std::function<void(LogLevel, std::string_view)> sink);

void log(LogLevel level, std::string_view message);
inline void log_warning(std::string_view message) { log(LogLevel::Warning, message); }
inline void log_debug(std::string_view message) { log(LogLevel::Debug, message); }

}  // namespace resmpc
