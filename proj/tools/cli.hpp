#pragma once

#include <iosfwd>

namespace mglab::cli {

enum ExitCode { kOk = 0, kUsage = 2, kInput = 3, kRuntime = 4 };

/// Full command-line entry point. argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mglab::cli
