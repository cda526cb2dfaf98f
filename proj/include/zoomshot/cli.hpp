#pragma once

#include <ostream>

#include "zoomshot/errors.hpp"

namespace zoomshot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitIo = 4;

/// Exit code for an error kind: 2 config/usage, 3 data, 4 I/O.
int exit_code(ErrorKind kind);

/// Entry point of the `zoomshot` tool. Subcommands: train, eval, synth,
/// gradcheck, inspect, ablate.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace zoomshot
