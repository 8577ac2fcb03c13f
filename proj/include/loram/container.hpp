// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// LMCK1 checkpoint container:
//
//   "LMCK1" | u64 LE header length | JSON header | payload
//
// The header lists every tensor (name, dtype, shape, absolute byte offset,
// byte length) plus free-form metadata. Tensor payloads are little-endian,
// row-major and start on 8-byte boundaries. A q4 tensor stores packed codes;
// its per-block scales live in the companion f32 tensor "<name>.scales".

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "loram/loram.hpp"
#include "loram/mask.hpp"
#include "loram/model.hpp"
#include "loram/prune.hpp"
#include "loram/quantize.hpp"

namespace loram {

enum class DType { kF32, kU8, kQ4 };

std::string_view to_string(DType d);

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;
  nlohmann::json attrs = nlohmann::json::object();  ///< extra per-tensor fields (q4: block_size, codebook)
};

class Container {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void add_f32(const std::string& name, const MatrixF& m);
  void add_u8(const std::string& name, const PruneMask& m);
  /// Adds "<name>" (q4 codes) and "<name>.scales" (f32).
  void add_q4(const std::string& name, const QuantizedTensor& q);

  bool has(std::string_view name) const;
  const TensorRecord& record(std::string_view name) const;  // ArtifactError if absent
  MatrixF f32(std::string_view name) const;
  PruneMask u8(std::string_view name) const;
  QuantizedTensor q4(std::string_view name) const;

  const std::vector<TensorRecord>& tensors() const { return tensors_; }

  /// Full file image. Identical inputs give identical bytes.
  std::string serialize() const;
  static Container parse(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  void add(TensorRecord r);
  std::vector<TensorRecord> tensors_;
};

// ---------------------------------------------------------------------------
// Typed payloads. Each writer sets metadata["kind"]; each reader checks it.

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

Container model_container(const TransformerWeights<float>& w);
/// Accepts dense models and quantized ones (projections are dequantized).
TransformerWeights<float> load_model(const Container& c);

Container quantized_container(const QuantizedModel& q);
QuantizedModel load_quantized(const Container& c);
bool is_quantized(const Container& c);

Container adapters_container(const AdapterSet<float>& a, const ModelConfig& cfg);
AdapterSet<float> load_adapters(const Container& c);

Container masks_container(const MaskSet& m);
MaskSet load_masks(const Container& c);

Container plan_container(const StructuredPlan& p);
StructuredPlan load_plan(const Container& c);

Container recovered_container(const RecoveredDelta& d, const ModelConfig& cfg);
RecoveredDelta load_recovered(const Container& c);

/// Concatenated payload bytes of every tensor, in header order; used to
/// compare artifacts independently of metadata.
std::uint64_t payload_hash(const Container& c);

}  // namespace loram
