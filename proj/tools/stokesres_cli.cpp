#include "stokesres/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return stokesres::cli::main(argc, argv, std::cout); }
