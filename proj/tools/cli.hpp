#pragma once

#include <iosfwd>

namespace vlmtta {

// Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the vlmtta tool, with injectable streams for tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vlmtta
