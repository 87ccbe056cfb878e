#include <iostream>

#include "nestner/cli.hpp"

int main(int argc, char** argv) { return nestner::run_cli(argc, argv, std::cout, std::cerr); }
