#pragma once

namespace meansparse::cli {

// Parses argv, runs one subcommand and returns the process exit code:
// 0 success, 2 configuration or usage error, 3 data error, 4 numeric error,
// 1 anything else.
int run(int argc, char** argv);

}  // namespace meansparse::cli
