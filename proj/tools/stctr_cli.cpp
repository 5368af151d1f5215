#include <string>
#include <vector>

#include <stctr/cli.hpp>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stctr::cli::run(std::move(args));
}
