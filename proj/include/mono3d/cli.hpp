#pragma once

#include <iosfwd>

namespace mono3d {

/// Command-line entry point. Subcommands: demo, eval, gradcheck, bench-anab,
/// viz-attention, train-toy. Each accepts `--config FILE` with key=value
/// lines named after its long options; flags given on the command line win.
/// Returns 0 on success, 1 when a check fails, 2 on usage errors.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace mono3d
