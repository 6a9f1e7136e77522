#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cmlm {

// Runs one command line (without the program name). Returns the process
// exit code: 0 on success, 1 on a usage or configuration error, 2 on a
// data, integrity or numerical error. Diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Applies CMLM_LOG (debug, info, warn) to the global logger.
void configure_logging();

}  // namespace cmlm
