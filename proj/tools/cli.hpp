#pragma once

#include <iosfwd>

namespace mpd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPlannerFailure = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `mpd` command line tool.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mpd::cli
