#include <vector>

#include "spectralseg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spectralseg::run_cli(args);
}
