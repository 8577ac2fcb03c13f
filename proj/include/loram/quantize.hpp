// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Block-wise 4-bit absmax quantization. Storage is packed 4-bit codes plus one
// f32 scale per block; arithmetic always runs on dequantized f32 values.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "loram/model.hpp"
#include "loram/tensor.hpp"

namespace loram {

enum class CodebookId { kNf4, kInt4Sym };

std::string_view to_string(CodebookId id);
CodebookId codebook_from_string(std::string_view s);

/// The 16 code values, ascending. int4sym uses slots 0..14 for {-7..7}/7;
/// slot 15 is never emitted.
const std::array<float, 16>& codebook(CodebookId id);

/// Number of codes the quantizer may choose from (16 for nf4, 15 for int4sym).
int usable_codes(CodebookId id);

/// Index of the exact 0.0 level.
std::uint8_t zero_code(CodebookId id);

/// Largest distance between adjacent usable levels, halved: the worst-case
/// rounding error on a normalized value.
double max_half_gap(CodebookId id);

struct QuantizedTensor {
  Index rows = 0;
  Index cols = 0;
  int block_size = 64;
  CodebookId codebook = CodebookId::kNf4;
  std::vector<std::uint8_t> packed;  ///< two codes per byte, low nibble first
  std::vector<float> scales;         ///< absmax per block

  Index numel() const { return rows * cols; }
  std::uint8_t code(Index i) const {
    const std::uint8_t byte = packed[static_cast<std::size_t>(i / 2)];
    return (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
  }
  bool operator==(const QuantizedTensor&) const = default;
};

QuantizedTensor quantize(const MatrixF& w, int block_size = 64, CodebookId id = CodebookId::kNf4);
MatrixF dequantize(const QuantizedTensor& q);

/// A model whose per-layer projections are stored quantized. Embeddings,
/// norms and lm_head stay f32 in `dense`; the quantized targets are zero-sized
/// placeholders there.
struct QuantizedModel {
  TransformerWeights<float> dense;
  std::map<std::string, QuantizedTensor> quantized;

  /// Dense weights with every quantized target dequantized.
  TransformerWeights<float> materialize() const;
};

QuantizedModel quantize_model(const TransformerWeights<float>& w, int block_size = 64,
                              CodebookId id = CodebookId::kNf4);

}  // namespace loram
