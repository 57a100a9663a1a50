#include <iostream>
#include <string>
#include <vector>

#include "bag/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return bag::cli::run(args, std::cin, std::cout, std::cerr);
}
