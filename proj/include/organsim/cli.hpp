#pragma once

#include <iosfwd>

namespace organsim {

// Entry point of the `organsim` command. Returns 0 on success, 1 for
// validation errors and 2 for runtime failures.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace organsim
