#include <string>
#include <vector>

#include "mixopt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mixopt::run_cli(args);
}
