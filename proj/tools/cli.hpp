#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace paiconv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Every training step allocates the same multi-megabyte tapes, and
/// glibc's default mmap threshold turns each one into fresh page faults.
void tune_allocator();

/// Runs the `paiconv` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace paiconv::cli
