#include <iostream>

#include "dlecho/cli.hpp"

int main(int argc, char** argv)
{
    return dlecho::cli::run(argc, argv, std::cout, std::cerr);
}
