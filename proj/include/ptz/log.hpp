#pragma once

#include <string>

namespace ptz {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Level from PTZ_SLAM_LOG (error, warn, info, debug); warn when unset.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

}  // namespace ptz
