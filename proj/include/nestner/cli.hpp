#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nestner {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCheck = 4;

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Codec roundtrips, the nesting example and small gradient checks.
std::vector<SelftestResult> run_selftest();

/// Entry point of the `nestner` tool. Subcommands: train, eval, predict,
/// analyze, filter-candidates, selftest. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nestner
