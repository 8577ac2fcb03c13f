// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "loram/tensor.hpp"

namespace loram {

/// Element-level binary mask, 1 = retained, 0 = pruned. Same shape as its target.
using PruneMask = Matrix<std::uint8_t>;

/// Masks keyed by target weight name (e.g. "layers.2.up").
using MaskSet = std::map<std::string, PruneMask>;

inline std::int64_t popcount(const PruneMask& m) {
  return m.cast<std::int64_t>().sum();
}

/// How an adapter delta interacts with an element mask on its target.
enum class DeltaMaskMode {
  kMasked,  ///< delta is (s·B·A) ∘ M
  kDense,   ///< delta is s·B·A
};

}  // namespace loram
