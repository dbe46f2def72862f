#include <iostream>
#include <string>
#include <vector>

#include "dxchoice/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dxchoice::cli_dispatch(args, std::cout, std::cerr);
}
