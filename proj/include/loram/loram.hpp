// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Training on pruned models, adapter recovery and merging, and the staged
// pipeline that strings them together.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loram/adam.hpp"
#include "loram/mask.hpp"
#include "loram/model.hpp"
#include "loram/prune.hpp"
#include "loram/quantize.hpp"

namespace loram {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 8;
  int micro_batch = 8;
  int seq_len = 64;
  int steps = 100;
  std::uint64_t seed = 1;
  DeltaMaskMode delta_mask_mode = DeltaMaskMode::kMasked;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  /// Throws ConfigError unless steps >= 1, 1 <= seq_len <= max_seq and
  /// micro_batch divides batch_size.
  void validate(const ModelConfig& model) const;
  AdamConfig adam() const;
};

/// Draws `batch_size` windows of seq_len + 1 tokens at uniform random offsets.
class BatchSampler {
 public:
  BatchSampler(std::span<const std::int32_t> corpus, int seq_len, std::uint64_t seed);

  /// Windows laid out back to back; split with make_lm_batch.
  std::vector<std::int32_t> next(int batch_size);

 private:
  std::span<const std::int32_t> corpus_;
  int seq_len_;
  std::mt19937_64 rng_;
};

using LossTrace = std::vector<double>;

/// "step,loss" with a header row.
std::string loss_csv(const LossTrace& trace);

/// Full-parameter next-token training of every weight in `w`. With `masks`,
/// gradients at mask-0 positions are zeroed each step so those weights stay
/// exactly zero. Throws NumericalError naming the step on a non-finite loss.
LossTrace align_pretrain(TransformerWeights<float>& w, std::span<const std::int32_t> corpus,
                         const TrainConfig& cfg, const MaskSet* masks = nullptr);

/// Same objective on an unpruned model; the base pretraining stage.
inline LossTrace pretrain(TransformerWeights<float>& w, std::span<const std::int32_t> corpus,
                          const TrainConfig& cfg) {
  return align_pretrain(w, corpus, cfg);
}

/// Trains only the adapter factors over a frozen base. With `masks`, the
/// delta of each masked target is multiplied by its mask when
/// cfg.delta_mask_mode is kMasked.
LossTrace train_pruned_lora(const TransformerWeights<float>& base, AdapterSet<float>& adapters,
                            std::span<const std::int32_t> corpus, const TrainConfig& cfg,
                            const MaskSet* masks = nullptr);

/// As above over a 4-bit base; projections are dequantized for every step.
LossTrace train_pruned_lora(const QuantizedModel& base, AdapterSet<float>& adapters,
                            std::span<const std::int32_t> corpus, const TrainConfig& cfg,
                            const MaskSet* masks = nullptr);

/// Full-shape adapter factors plus the support the delta is restricted to.
/// An empty support map means every delta applies densely.
struct RecoveredDelta {
  AdapterSet<float> factors;
  MaskSet support;

  /// s·B·A, multiplied by the target's support mask when one is present.
  MatrixF delta(const std::string& target) const;
};

/// Structured recovery: B rows scatter to retained output indices and A
/// columns to retained input indices; everything else is zero.
RecoveredDelta recover(const AdapterSet<float>& compact_adapters, const StructuredPlan& plan,
                       const ModelConfig& cfg);

/// Non-structured recovery is the identity on the factors. In masked mode the
/// masks become the delta's support.
RecoveredDelta recover(const AdapterSet<float>& adapters, const MaskSet& masks, DeltaMaskMode mode);

/// W0 + delta per target. Coordinates where the delta is zero keep W0's bits.
TransformerWeights<float> merge(const TransformerWeights<float>& original, const RecoveredDelta& delta);

/// Plain LoRA merge W0 + s·B·A.
TransformerWeights<float> merge(const TransformerWeights<float>& original, const AdapterSet<float>& adapters);

// ---------------------------------------------------------------------------
// Pipeline

struct StageFlags {
  bool prune = true;     // P
  bool align = true;     // A
  bool quantize = false; // Q
  bool recover = true;   // R

  std::string to_string() const;  // e.g. "P+A+R", "none"
};

struct PruneConfig {
  Strategy strategy = Strategy::kGradient;
  double ratio = 0.5;
  ProtectedLayers protect;
  int semi_n = 4;
  int semi_m = 8;
  /// Windows drawn from the alignment corpus for gradient importance.
  int calibration_windows = 8;
};

struct QuantConfig {
  int block_size = 64;
  CodebookId codebook = CodebookId::kNf4;
};

struct PipelineConfig {
  StageFlags flags;
  PruneConfig prune;
  QuantConfig quant;
  TrainConfig align;
  TrainConfig sft;
  std::uint64_t adapter_seed = 1;

  /// A and R require P; throws ConfigError otherwise.
  void validate(const ModelConfig& model) const;
};

/// Output of the prune stage: a plan (structured strategies) or element
/// masks (semi/unst), and the compacted or masked model.
struct PruneResult {
  std::optional<StructuredPlan> plan;
  MaskSet masks;
  TransformerWeights<float> model;
};

/// Gradient plans score `calibration_windows` windows of seq_len + 1 tokens
/// drawn from `calibration` with `seed`; random plans use `seed` directly.
PruneResult prune_model(const TransformerWeights<float>& base, std::span<const std::int32_t> calibration,
                        const PruneConfig& cfg, int seq_len, std::uint64_t seed);

/// LoRA factors for a pruned model. Under a plan they are drawn at full shape
/// and gathered, so B_P·A_P is the retained block of the unpruned init.
AdapterSet<float> init_pruned_adapters(const TransformerWeights<float>& pruned,
                                       const std::optional<StructuredPlan>& plan, std::uint64_t seed);

/// The weights and adapters to evaluate after a pipeline run. Either a merged
/// full model, or (without recovery) the pruned model with pruned adapters.
struct InferenceModel {
  TransformerWeights<float> weights;
  std::optional<AdapterSet<float>> adapters;
  MaskSet masks;
  DeltaMaskMode mask_mode = DeltaMaskMode::kMasked;
};

struct PipelineResult {
  std::optional<StructuredPlan> plan;
  MaskSet masks;                         ///< non-structured masks
  DeltaMaskMode mask_mode = DeltaMaskMode::kMasked;
  TransformerWeights<float> pruned;      ///< compact or masked base, after alignment when A is on
  LossTrace align_trace;
  std::optional<QuantizedModel> quantized;
  AdapterSet<float> adapters;            ///< trained, in the pruned model's shapes
  LossTrace sft_trace;
  std::optional<RecoveredDelta> recovered;
  std::optional<TransformerWeights<float>> merged;

  InferenceModel inference() const;
};

/// prune → [align] → [quantize] → LoRA training → [recover] → merge.
/// With every flag off this is plain LoRA on `base`.
PipelineResult run_pipeline(const TransformerWeights<float>& base, std::span<const std::int32_t> align_corpus,
                            std::span<const std::int32_t> sft_corpus, const PipelineConfig& cfg);

}  // namespace loram
