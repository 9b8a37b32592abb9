#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace amdc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInput = 3;

/// Runs one command. `args` excludes the program name. Failures print a
/// single line `error kind=<kind> message="<text>"` to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace amdc::cli
