#include "ptz/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace ptz {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("PTZ_SLAM_LOG");
    if (!v) return LogLevel::Warn;
    const std::string_view s(v);
    if (s == "error") return LogLevel::Error;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel level, const std::string& message) {
  if (level > log_level()) return;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace ptz
