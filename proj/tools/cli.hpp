#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace datn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one invocation; args[0] is the program name. Results go to `out`,
/// the resolved configuration and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace datn::cli
