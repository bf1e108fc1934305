#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace calm::cli {

enum ExitCode : int { ok = 0, validation_error = 1, runtime_error = 2 };

/// Full command line including the program name.
int run(int argc, char** argv);

/// `args` excludes the program name. Normal output goes to `out`, messages
/// to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace calm::cli
