#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spred {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

// `args` excludes the program name. Returns the process exit code: 0 on
// success, 1 on a usage or validation error, 2 on numerical or I/O failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Reads key=value lines into "--key" "value" pairs. Blank lines and lines
// starting with '#' are skipped. Throws std::invalid_argument on a malformed
// line or an unreadable file.
std::vector<std::string> read_config_file(const std::string& path);

// SPRED_THREADS, default 1. Throws std::invalid_argument unless a positive integer.
std::size_t worker_threads();

}  // namespace spred
