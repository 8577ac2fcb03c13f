// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "loram/errors.hpp"

namespace loram {

namespace {

std::string centi_str(std::int64_t centi) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%lld.%02lld", static_cast<long long>(centi / 100),
                static_cast<long long>(centi % 100));
  return buf;
}

// round_half_up(100 · num / den) for non-negative integers.
std::int64_t centi_ratio(__int128 num, __int128 den) {
  return static_cast<std::int64_t>((num * 200 + den) / (den * 2));
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

bool is_attention(TargetKind k) {
  return k == TargetKind::kQ || k == TargetKind::kK || k == TargetKind::kV || k == TargetKind::kO;
}

}  // namespace

double perplexity(const TransformerWeights<float>& w, std::span<const std::int32_t> tokens, int seq_len,
                  const AdapterSet<float>* adapters, const MaskSet* masks, DeltaMaskMode mode) {
  if (tokens.size() < 2) throw ConfigError("perplexity needs a corpus of at least 2 tokens");
  if (seq_len < 1 || seq_len > w.config.max_seq) {
    throw ConfigError("perplexity: seq_len must be in [1, " + std::to_string(w.config.max_seq) + "]");
  }
  const std::size_t positions = tokens.size() - 1;
  double total = 0;
  for (std::size_t s = 0; s < positions; s += static_cast<std::size_t>(seq_len)) {
    const std::size_t len = std::min(static_cast<std::size_t>(seq_len), positions - s);
    Tape<float> tape;
    ForwardSpec<float> spec;
    spec.adapters = adapters;
    spec.masks = masks;
    spec.mask_mode = mode;
    TokenBatch batch;
    batch.seq_len = static_cast<Index>(len);
    batch.ids.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s),
                     tokens.begin() + static_cast<std::ptrdiff_t>(s + len));
    auto graph = forward(tape, w, batch, spec);
    auto loss = cross_entropy(graph.logits, tokens.subspan(s + 1, len));
    total += static_cast<double>(loss.value()(0, 0)) * static_cast<double>(len);
  }
  const double ppl = std::exp(total / static_cast<double>(positions));
  if (!std::isfinite(ppl)) throw NumericalError("perplexity is not finite");
  return ppl;
}

double perplexity(const InferenceModel& m, std::span<const std::int32_t> tokens, int seq_len) {
  return perplexity(m.weights, tokens, seq_len, m.adapters ? &*m.adapters : nullptr, &m.masks, m.mask_mode);
}

std::string AccountingRow::reduction_str() const { return centi_str(reduction_centi); }
std::string AccountingRow::hbm_str() const { return centi_str(hbm_centi_gib); }

AccountingRow accounting(std::int64_t orig_params, std::int64_t pruned_params, int bits) {
  if (orig_params <= 0 || pruned_params <= 0) throw ConfigError("accounting needs positive parameter counts");
  if (bits != 16 && bits != 4) throw ConfigError("accounting: bits must be 16 or 4");
  AccountingRow r;
  r.orig_params = orig_params;
  r.pruned_params = pruned_params;
  r.bits_per_param = bits;
  r.effective_params = pruned_params * bits / 16;
  r.reduction_centi = centi_ratio(orig_params, r.effective_params);
  // bytes = pruned · bits / 8; GiB = bytes / 2^30.
  r.hbm_centi_gib = centi_ratio(static_cast<__int128>(pruned_params) * bits, __int128(8) << 30);
  return r;
}

std::string accounting_csv(std::span<const AccountingRow> rows) {
  std::string out = "orig_params,pruned_params,bits,effective_params,reduction,hbm_gib\n";
  for (const auto& r : rows) {
    out += std::to_string(r.orig_params) + ',' + std::to_string(r.pruned_params) + ',' +
           std::to_string(r.bits_per_param) + ',' + std::to_string(r.effective_params) + ',' + r.reduction_str() +
           ',' + r.hbm_str() + '\n';
  }
  return out;
}

std::vector<double> head_norms(const MatrixF& delta, TargetKind kind, int n_heads) {
  if (!is_attention(kind)) throw ConfigError("head_norms: " + std::string(to_string(kind)) + " is not an attention target");
  const bool by_row = indexes_units_by_row(kind);
  const Index width = by_row ? delta.rows() : delta.cols();
  if (n_heads < 1 || width % n_heads != 0) {
    throw ShapeError("head_norms: " + std::to_string(width) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  }
  const Index hd = width / n_heads;
  std::vector<double> out;
  for (Index h = 0; h < n_heads; ++h) {
    const MatrixD block = by_row ? MatrixD(delta.middleRows(h * hd, hd).cast<double>())
                                 : MatrixD(delta.middleCols(h * hd, hd).cast<double>());
    out.push_back(block.norm());
  }
  return out;
}

MlpNorm mlp_layer_norm(const MatrixF& delta, TargetKind kind) {
  if (kind != TargetKind::kUp && kind != TargetKind::kGate && kind != TargetKind::kDown) {
    throw ConfigError("mlp_layer_norm: " + std::string(to_string(kind)) + " is not an MLP target");
  }
  const bool by_row = indexes_units_by_row(kind);
  const MatrixD d = delta.cast<double>();
  const Index n = by_row ? d.rows() : d.cols();
  double sum = 0;
  Index counted = 0;
  for (Index i = 0; i < n; ++i) {
    const double norm = by_row ? d.row(i).norm() : d.col(i).norm();
    if (norm == 0.0) continue;
    sum += norm;
    ++counted;
  }
  MlpNorm r;
  r.all_excluded = counted == 0;
  r.mean = counted == 0 ? 0.0 : sum / static_cast<double>(counted);
  return r;
}

std::vector<NormRow> norm_table(const RecoveredDelta& delta, const ModelConfig& cfg) {
  std::vector<NormRow> rows;
  for (const auto& [name, ad] : delta.factors) {
    const TargetRef ref = parse_target(name);
    if (ref.layer < 0) continue;
    const MatrixF d = delta.delta(name);
    if (is_attention(ref.kind)) {
      const auto norms = head_norms(d, ref.kind, cfg.n_heads);
      for (std::size_t h = 0; h < norms.size(); ++h) {
        rows.push_back({ref.layer, ref.kind, static_cast<int>(h), norms[h], false});
      }
    } else {
      const auto m = mlp_layer_norm(d, ref.kind);
      rows.push_back({ref.layer, ref.kind, -1, m.mean, m.all_excluded});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const NormRow& a, const NormRow& b) {
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.target != b.target) return a.target < b.target;
    return a.head < b.head;
  });
  return rows;
}

std::string norm_csv(std::span<const NormRow> rows) {
  std::string out = "layer,target,head,norm\n";
  for (const auto& r : rows) {
    out += std::to_string(r.layer) + ',' + std::string(to_string(r.target)) + ',' +
           (r.head < 0 ? std::string("na") : std::to_string(r.head)) + ',' + format_double(r.norm) + '\n';
  }
  return out;
}

AblationReport ablation_report(std::vector<AblationRun> runs,
                               const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (runs.size() < 2) throw ConfigError("ablation_report needs at least two runs");
  for (const auto& r : runs) {
    if (r.steps.size() != r.ppl.size() || r.steps.empty()) {
      throw ConfigError("ablation run '" + r.label + "' has mismatched or empty steps/ppl");
    }
    if (r.steps != runs.front().steps) {
      throw ConfigError("ablation run '" + r.label + "' uses a different step grid than '" + runs.front().label + "'");
    }
  }
  auto find = [&](const std::string& label) -> const AblationRun& {
    for (const auto& r : runs) {
      if (r.label == label) return r;
    }
    throw ConfigError("ablation_report: unknown run '" + label + "'");
  };
  AblationReport rep;
  rep.steps = runs.front().steps;
  for (const auto& [a, b] : pairs) {
    const auto& ra = find(a);
    const auto& rb = find(b);
    AblationReport::Diff d{a, b, {}};
    for (std::size_t i = 0; i < rep.steps.size(); ++i) d.values.push_back(ra.ppl[i] - rb.ppl[i]);
    rep.diffs.push_back(std::move(d));
  }
  rep.runs = std::move(runs);
  return rep;
}

std::string AblationReport::to_csv() const {
  std::string out = "step";
  for (const auto& r : runs) out += ',' + r.label;
  for (const auto& d : diffs) out += ',' + d.a + '-' + d.b;
  out += '\n';
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += std::to_string(steps[i]);
    for (const auto& r : runs) out += ',' + format_double(r.ppl[i]);
    for (const auto& d : diffs) out += ',' + format_double(d.values[i]);
    out += '\n';
  }
  return out;
}

std::string final_ppl_csv(std::span<const AblationRun> runs) {
  std::string out = "label,final_ppl\n";
  for (const auto& r : runs) out += r.label + ',' + format_double(r.ppl.back()) + '\n';
  return out;
}

}  // namespace loram
