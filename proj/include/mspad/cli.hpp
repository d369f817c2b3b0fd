#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mspad {

/// Exit statuses of the command-line tool.
enum ExitStatus : int { kExitOk = 0, kExitDomainError = 1, kExitUsage = 2 };

/**
 * Parses `args` (args[0] is the program name) and runs the chosen
 * subcommand: stats, slice, detect, eval or cv.
 *
 * Returns 0 on success, 1 on domain errors (diagnostic on `err`) and 2 on
 * usage errors (usage text on `err`).
 */
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mspad
