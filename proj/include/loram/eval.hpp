// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loram/loram.hpp"
#include "loram/model.hpp"

namespace loram {

/// exp of the mean next-token NLL. Prediction positions are split into
/// consecutive non-overlapping windows of `seq_len` (the last may be shorter);
/// every position counts once.
double perplexity(const TransformerWeights<float>& w, std::span<const std::int32_t> tokens, int seq_len,
                  const AdapterSet<float>* adapters = nullptr, const MaskSet* masks = nullptr,
                  DeltaMaskMode mode = DeltaMaskMode::kMasked);

double perplexity(const InferenceModel& m, std::span<const std::int32_t> tokens, int seq_len);

// ---------------------------------------------------------------------------
// Parameter and memory accounting

struct AccountingRow {
  std::int64_t orig_params = 0;
  std::int64_t pruned_params = 0;
  int bits_per_param = 16;
  std::int64_t effective_params = 0;  ///< pruned · bits / 16
  std::int64_t reduction_centi = 0;   ///< reduction ratio × 100, rounded half up
  std::int64_t hbm_centi_gib = 0;     ///< GiB × 100, rounded half up

  double reduction_ratio() const { return static_cast<double>(reduction_centi) / 100.0; }
  double hbm_gib() const { return static_cast<double>(hbm_centi_gib) / 100.0; }
  std::string reduction_str() const;  // "2.17"
  std::string hbm_str() const;        // "11.19"
};

AccountingRow accounting(std::int64_t orig_params, std::int64_t pruned_params, int bits);

std::string accounting_csv(std::span<const AccountingRow> rows);

// ---------------------------------------------------------------------------
// Adapter norm analysis

/// Frobenius norm of each head's block of a materialized delta: row blocks for
/// q/k/v, column blocks for o.
std::vector<double> head_norms(const MatrixF& delta, TargetKind kind, int n_heads);

struct MlpNorm {
  double mean = 0.0;
  bool all_excluded = false;  ///< every row/column was identically zero
};

/// Mean L2 norm over rows (up, gate) or columns (down), skipping rows/columns
/// that are identically zero.
MlpNorm mlp_layer_norm(const MatrixF& delta, TargetKind kind);

struct NormRow {
  int layer = 0;
  TargetKind target = TargetKind::kQ;
  int head = -1;  ///< -1 for MLP rows
  double norm = 0.0;
  bool all_excluded = false;
};

/// Per-head rows for attention targets and per-layer rows for MLP targets,
/// computed on each target's materialized delta.
std::vector<NormRow> norm_table(const RecoveredDelta& delta, const ModelConfig& cfg);

/// "layer,target,head,norm"; head is "na" for MLP rows.
std::string norm_csv(std::span<const NormRow> rows);

// ---------------------------------------------------------------------------
// Ablation reports

struct AblationRun {
  std::string label;
  std::vector<int> steps;
  std::vector<double> ppl;
};

struct AblationReport {
  std::vector<int> steps;
  std::vector<AblationRun> runs;
  /// (label a, label b, per-step ppl(a) - ppl(b)).
  struct Diff {
    std::string a, b;
    std::vector<double> values;
    double final() const { return values.back(); }
  };
  std::vector<Diff> diffs;

  /// step, one column per run, then one "a-b" column per diff.
  std::string to_csv() const;
};

/// Throws ConfigError for fewer than two runs, unknown labels in `pairs`, or
/// runs whose step grids differ.
AblationReport ablation_report(std::vector<AblationRun> runs,
                               const std::vector<std::pair<std::string, std::string>>& pairs);

/// "label,final_ppl", one line per run.
std::string final_ppl_csv(std::span<const AblationRun> runs);

}  // namespace loram
