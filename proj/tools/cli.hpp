#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vln::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataError = 3,
  kNumericalFailure = 4,
};

// Parses and runs one command line (argv[0] included).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vln::cli
