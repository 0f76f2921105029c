#include <string>
#include <vector>

#include "cfa/cli.hpp"

int main(int argc, char** argv) {
  return cfa::run_cli(std::vector<std::string>(argv, argv + argc));
}
