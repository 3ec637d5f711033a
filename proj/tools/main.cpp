#include <iostream>
#include <string>
#include <vector>

#include "kge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kge::cli::run(args, std::cout, std::cerr);
}
