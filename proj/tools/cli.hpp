#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace textmax::cli {

/// Runs one command line (without the program name). Errors are reported on
/// `err` as a single JSON object line; the return value is the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace textmax::cli
