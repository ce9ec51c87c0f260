#include <iostream>

#include "bat3d/cli.hpp"

int main(int argc, char** argv) { return bat3d::cli::run(argc, argv, std::cout, std::cerr); }
