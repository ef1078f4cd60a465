#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace langfield {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1, // unexpected internal error
    kExitUsage = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

/// Runs the command-line tool. `args` excludes the program name. Normal output goes to
/// `out`; errors are written to `err` as one JSON object per line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace langfield
