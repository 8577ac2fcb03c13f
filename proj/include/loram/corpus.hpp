// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic corpora. "general" is pseudo-English prose from a
// seeded word-level Markov chain, with occasional arithmetic statements in
// words; "task" is one templated two-digit addition question and answer per
// line ("what is 23 plus 45? 68").

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace loram {

/// `seed` fixes the language (vocabulary and transitions); `stream` selects an
/// independent sample of it, so train and test text share one language.
std::string make_general_corpus(std::uint64_t seed, std::size_t bytes, std::uint64_t stream = 0);

std::string make_task_corpus(std::uint64_t seed, std::size_t lines, std::uint64_t stream = 0);

/// True iff `line` (without its newline) is "<a>+<b>=<a+b>" with a, b in
/// [10, 99] and the sum correct.
bool is_task_line(std::string_view line);

}  // namespace loram
