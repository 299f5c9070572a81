// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return loramerge::cli::run(argc, argv); }
