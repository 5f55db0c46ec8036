#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  paiconv::cli::tune_allocator();
  return paiconv::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
