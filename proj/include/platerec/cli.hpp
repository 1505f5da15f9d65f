#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace platerec {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

/// Entry point of the `platerec` executable. `args` excludes the program
/// name. Subcommands: generate, train, eval, predict.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace platerec
