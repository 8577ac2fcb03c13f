// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/corpus.hpp"

#include <array>
#include <charconv>
#include <random>
#include <vector>

#include "loram/rng.hpp"

namespace loram {

namespace {

constexpr std::array<std::string_view, 48> kCommonWords = {
    "the",  "a",     "of",    "and",   "to",    "in",    "is",    "that",  "it",    "was",  "for",   "on",
    "are",  "with",  "as",    "they",  "be",    "at",    "one",   "have",  "this",  "from", "by",    "but",
    "what", "all",   "were",  "when",  "we",    "there", "can",   "an",    "which", "their", "said", "if",
    "do",   "will",  "each",  "about", "how",   "up",    "out",   "them",  "then",  "she",   "many", "some"};

constexpr std::array<std::string_view, 20> kSyllables = {"ka", "lo", "mi", "ten", "ar", "sho", "ve", "ri", "dan", "pe",
                                                         "tor", "ul", "ne", "bi", "gra", "os", "fin", "ma", "el", "stu"};

constexpr int kPseudoWords = 96;
constexpr int kSuccessors = 6;

std::string pseudo_word(std::mt19937_64& rng) {
  std::string w;
  const auto n = 1 + uniform_below(rng, 3);
  for (std::uint64_t i = 0; i < n; ++i) w += kSyllables[uniform_below(rng, kSyllables.size())];
  return w;
}

int two_digit(std::mt19937_64& rng) { return 10 + static_cast<int>(uniform_below(rng, 90)); }

}  // namespace

std::string make_general_corpus(std::uint64_t seed, std::size_t bytes, std::uint64_t stream) {
  std::mt19937_64 rng(derive_seed(seed, 0x6e));
  std::vector<std::string> vocab(kCommonWords.begin(), kCommonWords.end());
  for (int i = 0; i < kPseudoWords; ++i) vocab.push_back(pseudo_word(rng));

  // Sparse first-order transitions with Zipf-like weights.
  std::vector<std::array<std::size_t, kSuccessors>> next(vocab.size());
  for (auto& succ : next) {
    for (auto& s : succ) s = uniform_below(rng, vocab.size());
  }
  std::discrete_distribution<int> pick({6, 4, 3, 2, 1, 1});
  if (stream != 0) rng.seed(derive_seed(derive_seed(seed, 0x6e), stream));

  std::string out;
  out.reserve(bytes + 64);
  std::size_t word = uniform_below(rng, vocab.size());
  bool sentence_start = true;
  while (out.size() < bytes) {
    if (sentence_start && uniform_below(rng, 6) == 0) {
      const int a = two_digit(rng), b = two_digit(rng);
      out += "we know that " + std::to_string(a) + " plus " + std::to_string(b) + " is " + std::to_string(a + b) + ". ";
      continue;
    }
    std::string w = vocab[word];
    if (sentence_start) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    out += w;
    sentence_start = false;
    if (uniform_below(rng, 9) == 0) {
      out += uniform_below(rng, 4) == 0 ? ".\n" : ". ";
      sentence_start = true;
    } else {
      out += ' ';
    }
    word = next[word][static_cast<std::size_t>(pick(rng))];
  }
  out.resize(bytes);
  return out;
}

std::string make_task_corpus(std::uint64_t seed, std::size_t lines, std::uint64_t stream) {
  std::mt19937_64 rng(derive_seed(derive_seed(seed, 0x74), stream));
  std::string out;
  for (std::size_t i = 0; i < lines; ++i) {
    const int a = two_digit(rng), b = two_digit(rng);
    out += "what is " + std::to_string(a) + " plus " + std::to_string(b) + "? " + std::to_string(a + b) + '\n';
  }
  return out;
}

bool is_task_line(std::string_view line) {
  auto parse = [](std::string_view s, int& v) {
    if (s.empty() || s.front() == '0') return false;
    for (char ch : s) {
      if (ch < '0' || ch > '9') return false;
    }
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
  };
  constexpr std::string_view kPrefix = "what is ", kPlus = " plus ", kAsk = "? ";
  if (!line.starts_with(kPrefix)) return false;
  line.remove_prefix(kPrefix.size());
  const auto plus = line.find(kPlus);
  const auto ask = line.find(kAsk);
  if (plus == std::string_view::npos || ask == std::string_view::npos || ask < plus) return false;
  int a = 0, b = 0, c = 0;
  if (!parse(line.substr(0, plus), a) || !parse(line.substr(plus + kPlus.size(), ask - plus - kPlus.size()), b) ||
      !parse(line.substr(ask + kAsk.size()), c)) {
    return false;
  }
  return a >= 10 && a <= 99 && b >= 10 && b <= 99 && c == a + b;
}

}  // namespace loram
