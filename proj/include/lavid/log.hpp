#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace lavid {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline std::atomic<LogLevel>& log_threshold() {
  static std::atomic<LogLevel> level{LogLevel::Info};
  return level;
}

inline void set_log_level(LogLevel level) { log_threshold() = level; }

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_threshold().load()) return;
  static std::mutex mu;
  static constexpr std::string_view kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(mu);
  std::cerr << "[lavid] " << kTags[static_cast<int>(level)] << ": " << msg << '\n';
}

inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::Warn, msg); }

}  // namespace lavid
