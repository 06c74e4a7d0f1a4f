#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace enet::cli {

/// Pull `--a.b=value` / `--a.b value` config overrides out of `args` and
/// return them as `a.b=value`.
std::vector<std::string> extract_overrides(std::vector<std::string>& args);

/// Run the command line (without the program name). Returns the exit code.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace enet::cli
