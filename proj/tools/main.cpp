#include <iostream>

#include "apideob/cli.hpp"

int main(int argc, char** argv) { return apideob::cli::run(argc, argv, std::cout, std::cerr); }
