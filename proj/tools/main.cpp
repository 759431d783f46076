#include <iostream>

#include "uamf/harness.hpp"

int main(int argc, char** argv) {
    return uamf::cli_main(argc, argv, std::cout, std::cerr);
}
