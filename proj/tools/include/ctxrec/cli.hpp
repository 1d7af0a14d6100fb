#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxrec::cli {

enum ExitCode : int {
  kOk = 0,
  kUsageError = 1,
  kDataError = 2,
  kNumericError = 3,
};

// Runs one command. `args` excludes the program name. Reports go to `out`
// unless the command was given --out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// key=value lines; '#' starts a comment. Throws ConfigError.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

}  // namespace ctxrec::cli
