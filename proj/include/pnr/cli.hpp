#pragma once

#include <iosfwd>

namespace pnr {

// Entry point of the `pnr` tool. Exit codes: 0 success, 1 validation failure
// (bad arguments, invalid config, failed gradient check), 2 I/O failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pnr
