#include <iostream>

#include "diva/cli.hpp"

int main(int argc, char** argv) {
  return diva::cli::run(argc, argv, std::cout, std::cerr);
}
