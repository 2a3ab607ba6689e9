#include <crowdsel/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return crowdsel::run_cli(argc, argv, std::cout, std::cerr); }
