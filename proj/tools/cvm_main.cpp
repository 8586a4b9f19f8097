// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cvm/cli/cli.hpp"

int main(int argc, char** argv) { return cvm::cli::run(argc, argv, std::cout, std::cerr); }
