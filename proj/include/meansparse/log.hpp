#pragma once

#include <string>

namespace meansparse {

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();
// Both write one line to stderr when the level allows it.
void log_warn(const std::string& message);
void log_info(const std::string& message);

}  // namespace meansparse
