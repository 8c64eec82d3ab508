#include "bidc/logging.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace bidc {

namespace {

LogLevel read_level() {
    const char* env = std::getenv("BIDC_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

LogLevel log_level() {
    static const LogLevel level = read_level();
    return level;
}

void log_info(const std::string& message) {
    if (log_level() >= LogLevel::Info) {
        std::lock_guard<std::mutex> lock(log_mutex());
        std::cerr << "[bidc] " << message << '\n';
    }
}

void log_debug(const std::string& message) {
    if (log_level() >= LogLevel::Debug) {
        std::lock_guard<std::mutex> lock(log_mutex());
        std::cerr << "[bidc:debug] " << message << '\n';
    }
}

}  // namespace bidc
