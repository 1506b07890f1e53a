// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "viewmatch/cli/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return viewmatch::cli::run_cli(args, std::cout, std::cerr);
}
