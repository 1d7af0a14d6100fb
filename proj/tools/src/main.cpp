#include <iostream>

#include "ctxrec/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ctxrec::cli::run(args, std::cout, std::cerr);
}
