#include <iostream>
#include <string>
#include <vector>

#include "hublab/cli.hpp"

int main(int argc, char** argv) {
  return hublab::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
