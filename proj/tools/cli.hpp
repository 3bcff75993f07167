#pragma once

#include <iostream>

namespace muse::cli {

/// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace muse::cli
