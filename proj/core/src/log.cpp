#include "resmpc/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace resmpc {
namespace {

std::atomic<LogLevel> g_level{LogLevel::Warning};
std::mutex g_sink_mutex;
std::function<void(LogLevel, std::string_view)> g_sink;

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::Debug: return "debug";
    case LogLevel::Info: return "info";
    case LogLevel::Warning: return "warning";
    case LogLevel::Error: return "error";
    case LogLevel::Off: break;
  }
  return "off";
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void set_log_sink(std::function<void(LogLevel, std::string_view)> sink) {
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void log(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::Off) return;
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  if (g_sink) {
    g_sink(level, message);
    return;
  }
  std::clog << "[resmpc " << level_name(level) << "] " << message << '\n';
}

}  // namespace resmpc
