#pragma once

#include <string>
#include <vector>

namespace rthare::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericError = 3 };

// args excludes the program name
int run(const std::vector<std::string>& args);

}  // namespace rthare::cli
