#include <iostream>

#include "ricenet/cli.hpp"

int main(int argc, char** argv) {
    return ricenet::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
