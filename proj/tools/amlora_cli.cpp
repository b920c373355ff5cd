#include <amlora/cli.hpp>

#include <iostream>

int main(int argc, char **argv)
{
    return amlora::cli::parse_and_dispatch(argc, argv, std::cout, std::cerr);
}
