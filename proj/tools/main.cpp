#include <string>
#include <vector>

#include "lbv/cli.hpp"

int main(int argc, char** argv) {
  return lbv::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
