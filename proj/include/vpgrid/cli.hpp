#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace vpgrid {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `vpgrid` command line. `args` excludes the program name. Data
/// goes to `out`, diagnostics to `err`.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

} // namespace vpgrid
