// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "loram/mask.hpp"
#include "loram/model.hpp"

namespace loram {

/// The four pruning variants: random and gradient-guided structured removal
/// of heads/channels, n:m semi-structured and unstructured magnitude masks.
enum class Strategy { kRandom, kGradient, kSemi, kUnstructured };

std::string_view to_string(Strategy s);  // "rand", "stru", "semi", "unst"
Strategy strategy_from_string(std::string_view s);
inline bool is_structured(Strategy s) { return s == Strategy::kRandom || s == Strategy::kGradient; }

struct LayerPlan {
  std::vector<int> heads;     ///< retained attention heads, ascending
  std::vector<int> channels;  ///< retained MLP intermediate channels, ascending

  bool operator==(const LayerPlan&) const = default;
};

/// Retained head/channel index sets per layer. A head index governs rows of
/// q/k/v and columns of o; a channel index governs rows of up/gate and
/// columns of down.
struct StructuredPlan {
  Strategy strategy = Strategy::kRandom;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> protected_layers;
  std::vector<LayerPlan> layers;

  bool is_protected(int layer) const;
  /// Throws ShapeError if indices are out of range, unsorted, duplicated or
  /// empty, or the layer count disagrees with the config.
  void validate(const ModelConfig& cfg) const;

  bool operator==(const StructuredPlan&) const = default;
};

void to_json(nlohmann::json& j, const StructuredPlan& p);
void from_json(const nlohmann::json& j, StructuredPlan& p);

/// Human-readable export listing retained indices per layer.
std::string plan_to_text(const StructuredPlan& plan);

struct ProtectedLayers {
  int first = 1;
  int last = 1;
};

/// Number of units removed from `total` at `ratio`: ⌊ratio·total⌋.
int units_to_remove(double ratio, int total);

// ---------------------------------------------------------------------------
// Non-structured masks

/// Prunes the ⌊ratio·numel⌋ smallest-|w| entries; ties prune the lower flat
/// index first.
PruneMask gen_mask_unstructured(const MatrixF& w, double ratio);

/// Within each aligned group of m consecutive entries of a row (the input
/// dimension), keeps the n largest-|w|; ties keep the lower in-group index.
PruneMask gen_mask_semi(const MatrixF& w, int n, int m);

/// Masks for every per-layer projection (q, k, v, o, up, gate, down).
MaskSet gen_masks_unstructured(const TransformerWeights<float>& w, double ratio);
MaskSet gen_masks_semi(const TransformerWeights<float>& w, int n, int m);

// ---------------------------------------------------------------------------
// Structured plans

StructuredPlan gen_plan_structured_random(const ModelConfig& cfg, double ratio,
                                          ProtectedLayers protect, std::uint64_t seed);

/// Coupled-group salience Σ|w·∂L/∂w| per head and per channel.
struct GroupImportance {
  std::vector<std::vector<double>> heads;     ///< [layer][head]
  std::vector<std::vector<double>> channels;  ///< [layer][channel]
};

GroupImportance coupled_importance(const TransformerWeights<float>& w,
                                   const TransformerWeights<float>& grads);

/// One forward/backward over `calibration`, then per unprotected layer the
/// lowest-importance groups are removed (ties remove the lower index).
StructuredPlan gen_plan_structured_gradient(const TransformerWeights<float>& w,
                                            const LmBatch& calibration, double ratio,
                                            ProtectedLayers protect, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Applying plans and masks

template <typename Scalar>
Matrix<Scalar> apply_mask(const Matrix<Scalar>& w, const PruneMask& m) {
  require_same_shape(w, m, "apply_mask");
  // select rather than multiply: pruned entries become +0, never -0.
  return (m.array() != 0).select(w, Scalar(0));
}

/// W ∘ M for every masked tensor, in place.
void apply_masks(TransformerWeights<float>& w, const MaskSet& masks);

/// Retained full-matrix row and column indices of one target under a plan.
struct TargetIndex {
  std::vector<Index> rows;
  std::vector<Index> cols;
};

/// Full (unpruned) shape of a target.
std::pair<Index, Index> full_shape(const ModelConfig& cfg, TargetKind kind);
TargetIndex target_index(const StructuredPlan& plan, const ModelConfig& cfg, std::string_view target);

MaskSet plan_to_masks(const StructuredPlan& plan, const ModelConfig& cfg);

/// Gathers retained rows/columns into smaller dense matrices. Embeddings,
/// norms and lm_head are copied unchanged.
template <typename Scalar>
TransformerWeights<Scalar> compact(const TransformerWeights<Scalar>& w, const StructuredPlan& plan);

/// Inverse of compact: scatters into full shapes, zero at pruned coordinates.
template <typename Scalar>
TransformerWeights<Scalar> expand(const TransformerWeights<Scalar>& compacted, const StructuredPlan& plan);

/// Pruned low-rank initialization: B rows / A columns gathered so that
/// B_P·A_P equals the retained block of B·A.
AdapterSet<float> gather_adapters(const AdapterSet<float>& full, const StructuredPlan& plan,
                                  const ModelConfig& cfg);

/// Parameter count of the compacted model a plan produces.
std::int64_t count_params(const ModelConfig& cfg, const StructuredPlan& plan, bool include_norms = true);

}  // namespace loram
