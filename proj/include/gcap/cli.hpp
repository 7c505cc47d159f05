#pragma once

#include <string>
#include <vector>

namespace gcap {

/// Command-line entry point. Returns 0 on success, 1 on a usage or
/// configuration error and 2 when the command fails while running.
int cli_dispatch(int argc, char** argv);
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace gcap
