#include <iostream>

#include "pnr/cli.hpp"

int main(int argc, char** argv) { return pnr::cli_main(argc, argv, std::cout, std::cerr); }
