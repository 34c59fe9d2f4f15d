// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace tsplat {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // a library error; printed as error[Kind]: message
inline constexpr int kExitUsage = 2;    // missing or unknown subcommand, flag or argument

/// Command-line entry point. Subcommands: init-pointcloud, train, render,
/// stream, eval, convert. Global flags: --seed, --threads,
/// --resolution-scale, --mode, --config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace tsplat
