#include <iostream>

#include "ccmt_tools/cli.hpp"

int main(int argc, char** argv) {
  return ccmt::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
