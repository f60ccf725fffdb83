// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "fedpara/cli.hpp"

int main(int argc, char** argv) { return fedpara::cli::run(argc, argv, std::cout, std::cerr); }
