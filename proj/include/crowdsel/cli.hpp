#pragma once

#include <iosfwd>

namespace crowdsel {

// Entry point of the `crowdsel` tool. Returns the process exit code:
// 0 success, 2 invalid input, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crowdsel
