#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace petsgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one command line (args excludes the program name). Output files go to
// runs/<timestamp>-<seed>/ under $PETSGAN_RUNS_DIR (default "runs") unless
// --out is given. Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Edit distance, used to suggest the closest known flag.
std::size_t levenshtein(const std::string& a, const std::string& b);

}  // namespace petsgan::cli
