#include "uneq/log.hpp"

#include <cstdlib>
#include <iostream>

namespace uneq {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("UNEQ_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "0" || v == "quiet") return LogLevel::Quiet;
    if (v == "2" || v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

void log_info(const std::string& message) {
  if (log_level() >= LogLevel::Info) std::cerr << "[uneq] " << message << '\n';
}

void log_debug(const std::string& message) {
  if (log_level() >= LogLevel::Debug)
    std::cerr << "[uneq:debug] " << message << '\n';
}

}  // namespace uneq
