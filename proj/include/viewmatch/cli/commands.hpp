// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace viewmatch::cli {

// Parses and runs one subcommand. Returns the process exit code: 0 on
// success, 1 on a runtime or validation error, CLI11's code on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace viewmatch::cli
