#include <iostream>

#include "ml2o/cli.hpp"

int main(int argc, char** argv) {
  return ml2o::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
