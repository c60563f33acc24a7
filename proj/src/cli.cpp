#include "lbv/cli.hpp"

namespace lbv::cli {

int run(const std::vector<std::string>&) { return 0; }

}  // namespace lbv::cli
