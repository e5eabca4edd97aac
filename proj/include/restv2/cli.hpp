#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace restv2 {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one CLI command. `args` excludes the program name. Reports go to
/// `out` (or to --output, written atomically); diagnostics go to `err`.
/// Returns 0 on success, 1 on domain errors, 2 on usage errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace restv2
