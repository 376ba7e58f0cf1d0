#include <iostream>

#include "mdpet/cli.hpp"

int main(int argc, char** argv) {
  return mdpet::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
