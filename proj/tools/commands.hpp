#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace exprfuse::cli {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // internal errors
    kExitConfig = 2,   // bad flags, config file, or override
    kExitData = 3,     // unreadable or inconsistent data
    kExitNumeric = 4,  // training diverged
    kExitCheckpoint = 5,
};

// Runs one command line (args excludes the program name). Reports go to
// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace exprfuse::cli
