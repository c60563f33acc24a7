#pragma once

#include <string>
#include <vector>

namespace lbv::cli {

/// Exit codes: 0 success, 1 usage error, 2 data/validation error,
/// 3 internal invariant violation.
int run(const std::vector<std::string>& args);

}  // namespace lbv::cli
