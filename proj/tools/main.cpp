#include "occfill/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return occfill::run_cli(args);
}
