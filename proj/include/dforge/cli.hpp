#pragma once

namespace dforge::cli {

// Entry point of the `disentaforge` tool. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error.
int parse_and_dispatch(int argc, const char* const* argv);

}  // namespace dforge::cli
