#pragma once

#include <string>
#include <vector>

namespace spectralseg {

// Dispatches a subcommand. Returns 0 on success, 1 on usage/validation
// errors, 2 on runtime failures.
int run_cli(const std::vector<std::string>& args);

}  // namespace spectralseg
