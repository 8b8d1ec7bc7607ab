#pragma once

#include <iosfwd>

namespace lcms::interface {

/// Entry point of the `lcms` tool. Exit codes: 0 success, 1 runtime failure,
/// 2 bad input (missing or malformed file, invalid argument), other nonzero
/// values for command line parse errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lcms::interface
