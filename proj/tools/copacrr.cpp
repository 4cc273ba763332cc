#include <iostream>
#include <string>
#include <vector>

#include "copacrr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return copacrr::run_cli(args, std::cout, std::cerr);
}
