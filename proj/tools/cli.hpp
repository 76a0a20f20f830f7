// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace afa::cli {

// Entry point shared by the executable and the tests. Exit codes: 0 success,
// 1 contract error or bad usage, 2 I/O or format error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Runs the built-in oracle checks, one line per check. Returns true when all pass.
bool selftest(std::ostream& out);

}  // namespace afa::cli
