// SPDX-License-Identifier: Apache-2.0
#include <kestrel/cli.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    return kestrel::run_cli(argc, argv, std::cout, std::cerr);
}
