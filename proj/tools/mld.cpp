#include <iostream>

#include "mld/cli/app.hpp"

int main(int argc, char** argv) {
  return mld::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
