#pragma once

#include <string>

namespace uneq {

// Verbosity from the UNEQ_LOG environment variable: 0 quiet, 1 info
// (default), 2 debug. Messages go to stderr.
enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace uneq
