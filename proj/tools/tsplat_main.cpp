// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return tsplat::run_cli(argc, argv, std::cout, std::cerr); }
