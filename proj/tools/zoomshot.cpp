#include <iostream>

#include "zoomshot/cli.hpp"

int main(int argc, char** argv) { return zoomshot::run_cli(argc, argv, std::cout, std::cerr); }
