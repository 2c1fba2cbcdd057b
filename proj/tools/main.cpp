#include <iostream>

#include "table2vec/cli.hpp"

int main(int argc, char** argv) { return t2v::cli::run(argc, argv, std::cout, std::cerr); }
