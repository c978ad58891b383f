#pragma once

#include <iosfwd>

namespace metaspatial::cli {

// Exit codes: 0 success, 1 engine error, 2 input or usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitEngine = 1;
inline constexpr int kExitInput = 2;

// The whole command-line tool; `main` only forwards to it. Results go to
// `out` unless a subcommand writes a file, diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace metaspatial::cli
