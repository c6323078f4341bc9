#pragma once

// Experiment runner: train / evaluate / depth-sweep / width-sweep /
// corrupt-eval / export-weights over key-value config files. All figure
// outputs are CSV plot data. Exit codes: 0 success, 2 usage or config error,
// 3 data error, 4 numeric failure.

#include <string>
#include <vector>

namespace ibnn::cli {

int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace ibnn::cli
