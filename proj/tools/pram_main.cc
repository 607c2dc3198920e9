#include <iostream>

#include "pram/cli.h"

int main(int argc, char** argv) { return pram::cli::Run(argc, argv, std::cout, std::cerr); }
