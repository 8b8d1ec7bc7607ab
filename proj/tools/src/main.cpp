#include <iostream>

#include "lcms/interface/cli.hpp"

int main(int argc, char** argv) { return lcms::interface::run_cli(argc, argv, std::cout, std::cerr); }
