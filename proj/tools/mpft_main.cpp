#include <iostream>
#include <string>
#include <vector>

#include "mpft/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mpft::cli::dispatch(args, std::cout, std::cerr);
}
