#pragma once

#include <string>
#include <vector>

namespace civrec::cli {

// Log verbosity from the CIVREC_LOG environment variable: quiet|info|debug
// (default info).
enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();

// `civrec prepare|train|eval|ablate ...`. Returns the process exit code;
// errors are reported on stderr and yield a nonzero code.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace civrec::cli
