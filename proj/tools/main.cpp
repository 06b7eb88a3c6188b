#include <iostream>
#include <string>
#include <vector>

#include "quantdemoire/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return qdm::run(args, std::cout, std::cerr);
}
