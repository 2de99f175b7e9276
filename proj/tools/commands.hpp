#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "zoforge/config.hpp"

namespace zoforge::cli {

// min(requested, ZOFORGE_THREADS) when the variable holds a positive
// integer, otherwise `requested`.
std::size_t capped_workers(std::size_t requested);

// Output directory of one seed: `out` itself for single-seed runs,
// out/seed_<s> otherwise.
std::string seed_dir(const RunConfig& cfg, std::uint64_t seed);

// Runs cfg.command for every seed and writes its files under cfg.out.
// Progress lines go to `log`. Throws zoforge::Error on failure.
void run_command(const RunConfig& cfg, std::ostream& log);

// Full command line: "zoforge <command> [options]". Returns the process
// exit status; errors are reported on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace zoforge::cli
