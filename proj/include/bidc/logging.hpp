#pragma once

#include <string>

namespace bidc {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

/// Read from BIDC_LOG ({quiet, info, debug}); defaults to info.
LogLevel log_level();

void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace bidc
