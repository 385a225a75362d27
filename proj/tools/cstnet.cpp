#include <string>
#include <vector>

#include "cstnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cstnet::cli::run_cli(args);
}
