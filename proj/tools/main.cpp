// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return loram::cli::run({argv + 1, argv + argc}, std::cout, std::cerr); }
