#pragma once

#include <ostream>

namespace orbitchain::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitViolation = 3;

/// Subcommands: simulate, consensus-bench, audit, verify-chain, report.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace orbitchain::cli
