#pragma once

// The read_lab command line: train, sweep, report, gradcheck.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace readlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAborted = 3;

/// args excludes the program name. Output root defaults to $READ_LAB_OUTDIR, then "runs".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "1..5" or "1,3,7".
std::vector<std::uint64_t> parse_seed_list(const std::string& s);
/// "0.01,0.02"; every entry must lie in (0, 1].
std::vector<double> parse_fraction_list(const std::string& s);

}  // namespace readlab::cli
