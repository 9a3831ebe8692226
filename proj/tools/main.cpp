#include "commands.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return corefusion::cli::run(argc, argv, std::cout, std::cerr);
}
