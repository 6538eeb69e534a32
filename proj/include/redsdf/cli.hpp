#pragma once

#include <string>
#include <vector>

namespace redsdf::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Full command-line entry point. Exit codes: 0 success, 2 usage error,
// 1 runtime failure. Diagnostics go to stderr, data and tables to stdout.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);  // args without argv[0]

// FNV-1a over a file's bytes; used to fingerprint configs in run manifests.
uint64_t file_hash(const std::string& path);

}  // namespace redsdf::cli
