#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  mmif::cli::keep_freed_memory();
  return mmif::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
