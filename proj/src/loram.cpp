// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/loram.hpp"

#include <cmath>
#include <sstream>

#include "loram/errors.hpp"
#include "loram/rng.hpp"

namespace loram {

namespace {

constexpr std::uint64_t kSamplerStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kCalibrationStream = 3;

// Parameters and their gradient accumulators, in a fixed order.
struct ParamList {
  std::vector<std::string> names;
  std::vector<MatrixF*> params;
  std::vector<MatrixF> grads;

  void add(std::string name, MatrixF& p) {
    names.push_back(std::move(name));
    params.push_back(&p);
    grads.push_back(MatrixF::Zero(p.rows(), p.cols()));
  }
  void zero() {
    for (auto& g : grads) g.setZero();
  }
};

void accumulate(MatrixF& into, const Var<float>& v, float weight) {
  if (v.grad().size() != 0) into += v.grad() * weight;
}

// One optimizer step per iteration; `micro_step` runs forward/backward on one
// micro-batch, adds weighted gradients into the list and returns its loss.
template <typename MicroStep>
LossTrace run_training(ParamList& params, std::span<const std::int32_t> corpus, const TrainConfig& cfg,
                       MicroStep&& micro_step, const char* stage) {
  BatchSampler sampler(corpus, cfg.seq_len, derive_seed(cfg.seed, kSamplerStream));
  AdamState<float> state;
  const AdamConfig adam = cfg.adam();
  const int n_micro = cfg.batch_size / cfg.micro_batch;
  const float weight = 1.0f / static_cast<float>(n_micro);
  LossTrace trace;
  trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const auto windows = sampler.next(cfg.batch_size);
    const auto per_micro = static_cast<std::size_t>(cfg.micro_batch) * static_cast<std::size_t>(cfg.seq_len + 1);
    params.zero();
    double loss = 0;
    try {
      for (int mb = 0; mb < n_micro; ++mb) {
        const std::span<const std::int32_t> part(windows.data() + per_micro * static_cast<std::size_t>(mb), per_micro);
        loss += micro_step(make_lm_batch(part, cfg.seq_len + 1), weight);
      }
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(stage) + ": " + e.what() + " at step " + std::to_string(step));
    }
    loss /= n_micro;
    if (!std::isfinite(loss)) {
      throw NumericalError(std::string(stage) + ": non-finite loss at step " + std::to_string(step));
    }
    trace.push_back(loss);
    adam_step<float>(params.params, params.grads, state, adam);
  }
  return trace;
}

MatrixF scatter_rows(const MatrixF& m, const std::vector<Index>& rows, Index full_rows) {
  MatrixF out = MatrixF::Zero(full_rows, m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) = m.row(static_cast<Index>(i));
  return out;
}

MatrixF scatter_cols(const MatrixF& m, const std::vector<Index>& cols, Index full_cols) {
  MatrixF out = MatrixF::Zero(m.rows(), full_cols);
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(cols[i]) = m.col(static_cast<Index>(i));
  return out;
}

void add_delta(MatrixF& w, const MatrixF& delta) {
  require_same_shape(w, delta, "merge");
  // Skipping exact zeros keeps W0's bit pattern (including -0) off the support.
  for (Index i = 0; i < w.size(); ++i) {
    if (delta.data()[i] != 0.0f) w.data()[i] += delta.data()[i];
  }
}

}  // namespace

void TrainConfig::validate(const ModelConfig& model) const {
  if (steps < 1) throw ConfigError("train steps must be >= 1");
  if (seq_len < 1 || seq_len > model.max_seq) {
    throw ConfigError("seq_len must be in [1, " + std::to_string(model.max_seq) + "], got " + std::to_string(seq_len));
  }
  if (batch_size < 1 || micro_batch < 1 || batch_size % micro_batch != 0) {
    throw ConfigError("micro_batch must divide batch_size");
  }
  if (!(lr >= 0) || !(eps > 0)) throw ConfigError("lr must be >= 0 and eps > 0");
}

AdamConfig TrainConfig::adam() const {
  AdamConfig a;
  a.lr = lr;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.weight_decay = weight_decay;
  return a;
}

BatchSampler::BatchSampler(std::span<const std::int32_t> corpus, int seq_len, std::uint64_t seed)
    : corpus_(corpus), seq_len_(seq_len), rng_(seed) {
  if (corpus.size() < static_cast<std::size_t>(seq_len) + 1) {
    throw ConfigError("corpus has " + std::to_string(corpus.size()) + " tokens, need at least seq_len + 1 = " +
                      std::to_string(seq_len + 1));
  }
}

std::vector<std::int32_t> BatchSampler::next(int batch_size) {
  const std::size_t window = static_cast<std::size_t>(seq_len_) + 1;
  const std::uint64_t starts = corpus_.size() - window + 1;
  std::vector<std::int32_t> out;
  out.reserve(window * static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const auto s = static_cast<std::size_t>(uniform_below(rng_, starts));
    out.insert(out.end(), corpus_.begin() + static_cast<std::ptrdiff_t>(s),
               corpus_.begin() + static_cast<std::ptrdiff_t>(s + window));
  }
  return out;
}

std::string loss_csv(const LossTrace& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << trace[i] << '\n';
  return os.str();
}

LossTrace align_pretrain(TransformerWeights<float>& w, std::span<const std::int32_t> corpus, const TrainConfig& cfg,
                         const MaskSet* masks) {
  cfg.validate(w.config);
  if (corpus.empty()) throw ConfigError("align_pretrain: corpus is empty");
  ParamList params;
  w.for_each([&](const std::string& name, MatrixF& m) { params.add(name, m); });
  std::vector<const PruneMask*> grad_masks(params.names.size(), nullptr);
  if (masks != nullptr) {
    for (std::size_t i = 0; i < params.names.size(); ++i) {
      const auto it = masks->find(params.names[i]);
      if (it == masks->end()) continue;
      require_same_shape(*params.params[i], it->second, "align_pretrain mask");
      grad_masks[i] = &it->second;
    }
  }
  auto micro = [&](const LmBatch& batch, float weight) {
    Tape<float> tape;
    ForwardSpec<float> spec;
    spec.train_weights = true;
    auto graph = forward(tape, w, batch.inputs, spec);
    auto loss = cross_entropy(graph.logits, std::span<const std::int32_t>(batch.targets));
    tape.backward(loss);
    for (std::size_t i = 0; i < params.names.size(); ++i) {
      accumulate(params.grads[i], graph.weights.at(params.names[i]), weight);
      if (grad_masks[i] != nullptr) params.grads[i] = apply_mask(params.grads[i], *grad_masks[i]);
    }
    return static_cast<double>(loss.value()(0, 0));
  };
  return run_training(params, corpus, cfg, micro, "align_pretrain");
}

namespace {

template <typename MaterializeBase>
LossTrace train_adapters(const ModelConfig& model, AdapterSet<float>& adapters, std::span<const std::int32_t> corpus,
                         const TrainConfig& cfg, const MaskSet* masks, MaterializeBase&& base_for_step) {
  cfg.validate(model);
  if (adapters.empty()) throw ConfigError("train_pruned_lora: no adapters to train");
  ParamList params;
  for (auto& [name, ad] : adapters) {
    params.add(name + ".b", ad.b);
    params.add(name + ".a", ad.a);
  }
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, kDropoutStream));
  auto micro = [&](const LmBatch& batch, float weight) {
    const TransformerWeights<float>& base = base_for_step();
    Tape<float> tape;
    ForwardSpec<float> spec;
    spec.adapters = &adapters;
    spec.masks = masks;
    spec.mask_mode = cfg.delta_mask_mode;
    spec.train_adapters = true;
    spec.dropout_rng = &dropout_rng;
    auto graph = forward(tape, base, batch.inputs, spec);
    auto loss = cross_entropy(graph.logits, std::span<const std::int32_t>(batch.targets));
    tape.backward(loss);
    std::size_t i = 0;
    for (const auto& [name, ad] : adapters) {
      const auto& [b, a] = graph.adapters.at(name);
      accumulate(params.grads[i++], b, weight);
      accumulate(params.grads[i++], a, weight);
    }
    return static_cast<double>(loss.value()(0, 0));
  };
  return run_training(params, corpus, cfg, micro, "train_pruned_lora");
}

}  // namespace

LossTrace train_pruned_lora(const TransformerWeights<float>& base, AdapterSet<float>& adapters,
                            std::span<const std::int32_t> corpus, const TrainConfig& cfg, const MaskSet* masks) {
  return train_adapters(base.config, adapters, corpus, cfg, masks,
                        [&]() -> const TransformerWeights<float>& { return base; });
}

LossTrace train_pruned_lora(const QuantizedModel& base, AdapterSet<float>& adapters,
                            std::span<const std::int32_t> corpus, const TrainConfig& cfg, const MaskSet* masks) {
  TransformerWeights<float> current;
  return train_adapters(base.dense.config, adapters, corpus, cfg, masks,
                        [&]() -> const TransformerWeights<float>& {
                          current = base.materialize();
                          return current;
                        });
}

MatrixF RecoveredDelta::delta(const std::string& target) const {
  const auto& ad = factors.at(target);
  MatrixF d = ad.delta();
  const auto it = support.find(target);
  return it == support.end() ? d : apply_mask(d, it->second);
}

RecoveredDelta recover(const AdapterSet<float>& compact_adapters, const StructuredPlan& plan,
                       const ModelConfig& cfg) {
  plan.validate(cfg);
  RecoveredDelta out;
  for (const auto& [name, ad] : compact_adapters) {
    const auto idx = target_index(plan, cfg, name);
    const auto [rows, cols] = full_shape(cfg, parse_target(name).kind);
    if (ad.b.rows() != static_cast<Index>(idx.rows.size()) || ad.a.cols() != static_cast<Index>(idx.cols.size())) {
      throw ShapeError("recover: adapter " + name + " (" + shape_str(ad.b) + ", " + shape_str(ad.a) +
                       ") does not match the plan's retained " + std::to_string(idx.rows.size()) + "x" +
                       std::to_string(idx.cols.size()));
    }
    LoraAdapter<float> r = ad;
    r.b = scatter_rows(ad.b, idx.rows, rows);
    r.a = scatter_cols(ad.a, idx.cols, cols);
    out.factors.emplace(name, std::move(r));
  }
  return out;
}

RecoveredDelta recover(const AdapterSet<float>& adapters, const MaskSet& masks, DeltaMaskMode mode) {
  RecoveredDelta out;
  out.factors = adapters;
  if (mode == DeltaMaskMode::kMasked) {
    for (const auto& [name, ad] : adapters) {
      const auto it = masks.find(name);
      if (it == masks.end()) continue;
      if (it->second.rows() != ad.b.rows() || it->second.cols() != ad.a.cols()) {
        throw ShapeError("recover: mask for " + name + " is " + shape_str(it->second));
      }
      out.support.emplace(name, it->second);
    }
  }
  return out;
}

TransformerWeights<float> merge(const TransformerWeights<float>& original, const RecoveredDelta& delta) {
  TransformerWeights<float> out = original;
  for (const auto& [name, ad] : delta.factors) {
    MatrixF* w = out.find(name);
    if (w == nullptr) throw ShapeError("merge: unknown target '" + name + "'");
    add_delta(*w, delta.delta(name));
  }
  return out;
}

TransformerWeights<float> merge(const TransformerWeights<float>& original, const AdapterSet<float>& adapters) {
  RecoveredDelta d;
  d.factors = adapters;
  return merge(original, d);
}

// ---------------------------------------------------------------------------

std::string StageFlags::to_string() const {
  std::string s;
  auto add = [&](bool on, const char* tag) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += tag;
  };
  add(prune, "P");
  add(align, "A");
  add(quantize, "Q");
  add(recover, "R");
  return s.empty() ? "none" : s;
}

void PipelineConfig::validate(const ModelConfig& model) const {
  if (flags.recover && !flags.prune) throw ConfigError("stage R (recover) requires P (prune)");
  if (flags.align && !flags.prune) throw ConfigError("stage A (align) requires P (prune)");
  if (flags.prune) units_to_remove(prune.ratio, 1);
  if (flags.align) align.validate(model);
  sft.validate(model);
}

InferenceModel PipelineResult::inference() const {
  InferenceModel m;
  if (merged) {
    m.weights = *merged;
    return m;
  }
  m.weights = quantized ? quantized->materialize() : pruned;
  m.adapters = adapters;
  m.masks = masks;
  m.mask_mode = mask_mode;
  return m;
}

PruneResult prune_model(const TransformerWeights<float>& base, std::span<const std::int32_t> calibration,
                        const PruneConfig& cfg, int seq_len, std::uint64_t seed) {
  PruneResult r;
  switch (cfg.strategy) {
    case Strategy::kRandom:
      r.plan = gen_plan_structured_random(base.config, cfg.ratio, cfg.protect, seed);
      break;
    case Strategy::kGradient: {
      BatchSampler sampler(calibration, seq_len, derive_seed(seed, kCalibrationStream));
      const auto windows = sampler.next(cfg.calibration_windows);
      r.plan = gen_plan_structured_gradient(base, make_lm_batch(windows, seq_len + 1), cfg.ratio, cfg.protect, seed);
      break;
    }
    case Strategy::kSemi:
      r.masks = gen_masks_semi(base, cfg.semi_n, cfg.semi_m);
      break;
    case Strategy::kUnstructured:
      r.masks = gen_masks_unstructured(base, cfg.ratio);
      break;
  }
  if (r.plan) {
    r.model = compact(base, *r.plan);
  } else {
    r.model = base;
    apply_masks(r.model, r.masks);
  }
  return r;
}

AdapterSet<float> init_pruned_adapters(const TransformerWeights<float>& pruned,
                                       const std::optional<StructuredPlan>& plan, std::uint64_t seed) {
  if (!plan) return init_adapters(pruned, seed);
  return gather_adapters(init_adapters(expand(pruned, *plan), seed), *plan, pruned.config);
}

PipelineResult run_pipeline(const TransformerWeights<float>& base, std::span<const std::int32_t> align_corpus,
                            std::span<const std::int32_t> sft_corpus, const PipelineConfig& cfg) {
  const ModelConfig& mc = base.config;
  cfg.validate(mc);
  PipelineResult r;
  r.mask_mode = cfg.sft.delta_mask_mode;

  // P: prune.
  if (cfg.flags.prune) {
    auto p = prune_model(base, align_corpus, cfg.prune, cfg.align.seq_len, cfg.align.seed);
    r.plan = std::move(p.plan);
    r.masks = std::move(p.masks);
    r.pruned = std::move(p.model);
  } else {
    r.pruned = base;
  }
  r.adapters = init_pruned_adapters(r.pruned, r.plan, cfg.adapter_seed);

  // A: align the pruned model.
  const MaskSet* masks = r.masks.empty() ? nullptr : &r.masks;
  if (cfg.flags.align) r.align_trace = align_pretrain(r.pruned, align_corpus, cfg.align, masks);

  // Q, then LoRA training over the frozen base.
  if (cfg.flags.quantize) {
    r.quantized = quantize_model(r.pruned, cfg.quant.block_size, cfg.quant.codebook);
    r.sft_trace = train_pruned_lora(*r.quantized, r.adapters, sft_corpus, cfg.sft, masks);
  } else {
    r.sft_trace = train_pruned_lora(r.pruned, r.adapters, sft_corpus, cfg.sft, masks);
  }

  // R, then merge into the original weights.
  if (!cfg.flags.prune) {
    r.merged = merge(base, r.adapters);
  } else if (cfg.flags.recover) {
    r.recovered = r.plan ? recover(r.adapters, *r.plan, mc) : recover(r.adapters, r.masks, cfg.sft.delta_mask_mode);
    r.merged = merge(base, *r.recovered);
  }
  return r;
}

}  // namespace loram
