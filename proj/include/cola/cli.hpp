#pragma once

#include <string>
#include <vector>

namespace cola::cli {

// Entry point shared by the binary and the tests; returns the process exit
// code. Subcommands: gen | train | eval | compare | gradcheck | validate |
// repro.
int run(const std::vector<std::string>& args);

}  // namespace cola::cli
