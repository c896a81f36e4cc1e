#include <iostream>

#include "grounder/cli.hpp"

int main(int argc, char** argv) { return grounder::run_cli(argc, argv, std::cout, std::cerr); }
