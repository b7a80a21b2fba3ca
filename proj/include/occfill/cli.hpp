#pragma once

#include <string>
#include <vector>

namespace occfill {

/// Entry point of the `occfill` tool. Returns 0 on success, 1 on a usage
/// error and 2 on a runtime error.
int run_cli(const std::vector<std::string>& args);

}  // namespace occfill
