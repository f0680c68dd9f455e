#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xmsleep::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime or format error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// `args` excludes the program name. Errors are written to `err` as a single
// line `error: <category>: <detail>`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xmsleep::cli
