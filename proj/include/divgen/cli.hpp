#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace divgen {

// Parses and executes one command line (args exclude the program name).
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace divgen
