#pragma once

#include <ostream>

namespace murestitch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr int kManifestVersion = 1;

// Entry point of the murestitch tool. Never throws; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace murestitch::cli
