// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// The loram command line. Each subcommand reads and writes checkpoint
// containers and prints one "key=value ..." summary line on success.
//
// Exit codes: 0 success, 2 bad config or usage, 3 missing or invalid
// artifact, 4 shape mismatch, 5 numerical failure, 1 anything else.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace loram::cli {

constexpr int kExitConfig = 2;
constexpr int kExitArtifact = 3;
constexpr int kExitShape = 4;
constexpr int kExitNumerical = 5;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace loram::cli
