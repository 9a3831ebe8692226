#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace corefusion::cli {

enum ExitCode : int { exit_ok = 0, exit_runtime = 1, exit_usage = 2 };

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// `requested` itself when it is missing or empty (or `overwrite` is set),
/// otherwise a fresh `run-<UTC timestamp>` directory beneath it.
std::filesystem::path resolve_output_dir(const std::filesystem::path& requested, bool overwrite);

} // namespace corefusion::cli
