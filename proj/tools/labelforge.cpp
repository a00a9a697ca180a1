#include "labelforge_cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return labelforge::cli::run_cli(std::move(args));
}
