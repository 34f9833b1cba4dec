#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitUsage = 64;

/// Runs `sidtool <command> ...`; args excludes the program name.
/// Results go to `out`, progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sid::cli
