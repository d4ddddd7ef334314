#include "verhallu/harness.hpp"

#include <iostream>

int main(int argc, char ** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return verhallu::harness::run_cli(std::move(args), std::cout, std::cerr);
}
