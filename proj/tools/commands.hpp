#pragma once

#include <iosfwd>

namespace mrfibp::cli {

/// Parses argv and runs one subcommand. Results go to `out`; failures are
/// reported on `err` as a single "error[<code>]: <message>" line. Returns the
/// process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mrfibp::cli
