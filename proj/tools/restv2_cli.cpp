#include <iostream>
#include <string>
#include <vector>

#include "restv2/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return restv2::dispatch(args, std::cout, std::cerr);
}
