#include <iostream>
#include <string>
#include <vector>

#include "mspad/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mspad::dispatch(args, std::cout, std::cerr);
}
