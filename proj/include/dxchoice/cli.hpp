#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dxchoice {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one subcommand (`args` excludes the program name). Writes the
/// one-line summary to `out` and diagnostics or usage to `err`.
/// Returns 0 on success, 1 on invalid input or flags, 2 on numerical failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dxchoice
