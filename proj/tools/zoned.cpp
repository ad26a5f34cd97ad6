#include "zonedesign/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return zonedesign::cli::run(argc, argv, std::cout, std::cerr); }
