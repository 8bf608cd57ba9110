#include <iostream>
#include <string>
#include <vector>

#include "polpre/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return polpre::run_cli(args, std::cout, std::cerr);
}
