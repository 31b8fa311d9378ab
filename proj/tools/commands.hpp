#pragma once

#include <iosfwd>

namespace geom::cli {

// Parses argv, runs the subcommand, maps errors to exit codes:
// 0 success, 1 runtime/model error, 2 usage/config error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace geom::cli
