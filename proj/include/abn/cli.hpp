#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace abn::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_validation = 1;
inline constexpr int exit_internal = 2;

/// Runs one subcommand (buildcache, search, fit, simulate, evaluate, bench).
/// `args` excludes the program name. Diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace abn::cli
