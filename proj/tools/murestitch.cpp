#include <iostream>

#include "murestitch/cli.hpp"

int main(int argc, char** argv) { return murestitch::cli::run(argc, argv, std::cout, std::cerr); }
