#pragma once

#include <string>
#include <vector>

namespace cfa {

/// Entry point behind the `cfa` binary. args[0] is the program name.
/// Returns 0 on success, 1 on validation or runtime failure, 2 on usage errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace cfa
