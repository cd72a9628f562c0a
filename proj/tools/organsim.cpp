#include <iostream>

#include "organsim/cli.hpp"

int main(int argc, char** argv) { return organsim::run_cli(argc, argv, std::cout, std::cerr); }
