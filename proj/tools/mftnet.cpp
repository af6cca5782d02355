#include <iostream>

#include "mftnet/cli.hpp"

int main(int argc, char** argv) { return mftnet::run_cli(argc, argv, std::cout, std::cerr); }
