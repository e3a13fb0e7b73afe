// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace kestrel
{

/// Exit codes of the command-line tool.
inline constexpr int exit_ok = 0;
inline constexpr int exit_runtime_failure = 1;
inline constexpr int exit_config_error = 2;

/// Entry point of the `kestrel` tool: warmup | run | ablate | gen-world | trace | grade.
/// Never throws; every failure maps to an exit code with a message on `err`.
int run_cli(int argc, char const* const* argv, std::ostream& out, std::ostream& err);

} // namespace kestrel
