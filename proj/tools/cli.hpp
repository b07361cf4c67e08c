#pragma once

#include <string>
#include <vector>

namespace knnfuse::cli {

/// Runs one subcommand. Returns 0 on success, 1 on runtime error, 2 on usage error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace knnfuse::cli
