#pragma once

#include <iosfwd>

namespace pram::cli {

// Exit codes of Run.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Parses argv[1..] as `<subcommand> [options]` and executes it. Primary
// output goes to `out` unless redirected with -o; diagnostics and usage go
// to `err`.
int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pram::cli
