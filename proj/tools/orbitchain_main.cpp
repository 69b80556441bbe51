#include <iostream>

#include "orbitchain/cli.hpp"

int main(int argc, char** argv) { return orbitchain::cli::run(argc, argv, std::cout, std::cerr); }
