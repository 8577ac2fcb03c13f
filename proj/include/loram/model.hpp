// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loram/autodiff.hpp"
#include "loram/mask.hpp"
#include "loram/tensor.hpp"

namespace loram {

// ---------------------------------------------------------------------------
// Configuration

enum class PositionEncoding { kNone, kSinusoidal };

/// The eight weight matrices an adapter may attach to.
enum class TargetKind { kQ, kK, kV, kO, kUp, kGate, kDown, kLmHead };

std::string_view to_string(TargetKind kind);
TargetKind target_kind_from_string(std::string_view s);

/// Which axis of a target carries the attention-head / MLP-channel index.
/// q/k/v/up/gate index heads or channels by row, o/down by column.
bool indexes_units_by_row(TargetKind kind);

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab = 256;
  int max_seq = 128;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  double lora_dropout = 0.0;
  std::vector<TargetKind> lora_targets = {TargetKind::kQ,  TargetKind::kK,    TargetKind::kV,
                                          TargetKind::kO,  TargetKind::kUp,   TargetKind::kGate,
                                          TargetKind::kDown, TargetKind::kLmHead};
  PositionEncoding position = PositionEncoding::kNone;
  double norm_eps = 1e-5;
  std::uint64_t seed = 1;

  int head_dim() const { return d_model / n_heads; }
  double lora_scaling() const { return lora_alpha / lora_rank; }
  bool targets(TargetKind kind) const;

  /// Throws ConfigError on violated invariants.
  void validate() const;

  /// "llama2" adapts lm_head as well; "llama3" leaves it out.
  static std::vector<TargetKind> preset_targets(std::string_view preset);
};

/// Name of a per-layer weight ("layers.<l>.<kind>") or "lm_head".
std::string target_name(int layer, TargetKind kind);

struct TargetRef {
  int layer = -1;  ///< -1 for lm_head
  TargetKind kind = TargetKind::kQ;
};

/// Parses a target name; throws ShapeError if it is not an adaptable matrix.
TargetRef parse_target(std::string_view name);

// ---------------------------------------------------------------------------
// Weights

/// Linear weights are stored [out × in] and applied as x·Wᵀ. Attention
/// matrices split into contiguous head blocks of head_dim rows (q, k, v) or
/// columns (o). Under structured compaction a layer may hold fewer heads or
/// channels than the config; counts are read off the matrix shapes.
template <typename Scalar>
struct LayerWeights {
  Matrix<Scalar> q, k, v;  // [heads·hd × d_model]
  Matrix<Scalar> o;        // [d_model × heads·hd]
  Matrix<Scalar> up, gate; // [channels × d_model]
  Matrix<Scalar> down;     // [d_model × channels]
  Matrix<Scalar> attn_norm, mlp_norm;  // [1 × d_model]

  Matrix<Scalar>& matrix(TargetKind kind);
  const Matrix<Scalar>& matrix(TargetKind kind) const;
};

template <typename Scalar>
struct TransformerWeights {
  ModelConfig config;
  Matrix<Scalar> embed;       // [vocab × d_model]
  std::vector<LayerWeights<Scalar>> layers;
  Matrix<Scalar> final_norm;  // [1 × d_model]
  Matrix<Scalar> lm_head;     // [vocab × d_model]

  /// Visits every tensor in canonical order with its name.
  template <typename F>
  void for_each(F&& f) {
    f(std::string("embed"), embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "q", L.q);
      f(p + "k", L.k);
      f(p + "v", L.v);
      f(p + "o", L.o);
      f(p + "up", L.up);
      f(p + "gate", L.gate);
      f(p + "down", L.down);
      f(p + "attn_norm", L.attn_norm);
      f(p + "mlp_norm", L.mlp_norm);
    }
    f(std::string("final_norm"), final_norm);
    f(std::string("lm_head"), lm_head);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<TransformerWeights*>(this)->for_each(
        [&](const std::string& name, Matrix<Scalar>& m) { f(name, static_cast<const Matrix<Scalar>&>(m)); });
  }

  /// Adaptable matrix by target name; throws ShapeError on unknown names.
  Matrix<Scalar>& target(std::string_view name);
  const Matrix<Scalar>& target(std::string_view name) const;
  /// Any tensor by name, or nullptr.
  Matrix<Scalar>* find(std::string_view name);
  const Matrix<Scalar>* find(std::string_view name) const;

  int heads_in_layer(std::size_t l) const {
    return static_cast<int>(layers[l].q.rows() / config.head_dim());
  }
  int channels_in_layer(std::size_t l) const { return static_cast<int>(layers[l].up.rows()); }

  template <typename Other>
  TransformerWeights<Other> cast() const {
    TransformerWeights<Other> out;
    out.config = config;
    out.embed = embed.template cast<Other>();
    out.final_norm = final_norm.template cast<Other>();
    out.lm_head = lm_head.template cast<Other>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& a = layers[l];
      auto& b = out.layers[l];
      b.q = a.q.template cast<Other>();
      b.k = a.k.template cast<Other>();
      b.v = a.v.template cast<Other>();
      b.o = a.o.template cast<Other>();
      b.up = a.up.template cast<Other>();
      b.gate = a.gate.template cast<Other>();
      b.down = a.down.template cast<Other>();
      b.attn_norm = a.attn_norm.template cast<Other>();
      b.mlp_norm = a.mlp_norm.template cast<Other>();
    }
    return out;
  }

  /// Verifies every tensor shape against the config (allowing fewer heads or
  /// channels per layer). Throws ShapeError.
  void check_shapes() const;
};

/// Deterministic initialization from cfg.seed: matrices ~ N(0, 0.02²), norm
/// gains 1, lm_head 0.
TransformerWeights<float> init_model(const ModelConfig& cfg);

/// Exact scalar count; `include_norms = false` skips RMSNorm gains.
std::int64_t count_params(const TransformerWeights<float>& w, bool include_norms = true);
std::int64_t count_params(const ModelConfig& cfg, bool include_norms = true);

/// Combined FNV-1a fingerprint of every tensor, in canonical order.
std::uint64_t fingerprint(const TransformerWeights<float>& w);

// ---------------------------------------------------------------------------
// LoRA adapters

/// Low-rank pair with delta s·B·A; B is [m × r], A is [r × n] for an [m × n]
/// target.
template <typename Scalar>
struct LoraAdapter {
  std::string target;
  Matrix<Scalar> b;
  Matrix<Scalar> a;
  double scaling = 1.0;

  Index rank() const { return a.rows(); }
  Matrix<Scalar> delta() const { return (b * a) * static_cast<Scalar>(scaling); }
};

template <typename Scalar>
using AdapterSet = std::map<std::string, LoraAdapter<Scalar>>;

/// One adapter per configured target with B = 0 and A ~ U(-1/√n, 1/√n), shaped
/// for the given (possibly compacted) weights.
AdapterSet<float> init_adapters(const TransformerWeights<float>& w, std::uint64_t seed);

template <typename Other, typename Scalar>
AdapterSet<Other> cast_adapters(const AdapterSet<Scalar>& in) {
  AdapterSet<Other> out;
  for (const auto& [name, ad] : in) {
    out[name] = LoraAdapter<Other>{ad.target, ad.b.template cast<Other>(), ad.a.template cast<Other>(),
                                   ad.scaling};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tokens

std::vector<std::int32_t> tokenize(std::string_view text);
std::string detokenize(std::span<const std::int32_t> ids);

/// B equal-length sequences, flattened row-major.
struct TokenBatch {
  Index seq_len = 0;
  std::vector<std::int32_t> ids;

  Index batch() const { return seq_len == 0 ? 0 : static_cast<Index>(ids.size()) / seq_len; }
};

/// Next-token pairs: targets[i] is the token following inputs.ids[i].
struct LmBatch {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
};

/// Splits windows of `window_len` tokens (flattened) into inputs of length
/// window_len - 1 and their shifted targets.
LmBatch make_lm_batch(std::span<const std::int32_t> windows, Index window_len);

// ---------------------------------------------------------------------------
// Forward

template <typename Scalar>
struct ForwardSpec {
  const AdapterSet<Scalar>* adapters = nullptr;
  /// Element masks per target. Only consulted for adapter deltas.
  const MaskSet* masks = nullptr;
  DeltaMaskMode mask_mode = DeltaMaskMode::kMasked;
  bool train_weights = false;
  bool train_adapters = false;
  /// Adapter-input dropout generator; dropout is active only when set and
  /// config.lora_dropout > 0.
  std::mt19937_64* dropout_rng = nullptr;
};

template <typename Scalar>
struct ForwardGraph {
  Var<Scalar> logits;  ///< [B·T × vocab]
  std::map<std::string, Var<Scalar>> weights;
  std::map<std::string, std::pair<Var<Scalar>, Var<Scalar>>> adapters;  ///< (B, A)
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index seq_len, Index d_model) {
  Matrix<Scalar> pe(seq_len, d_model);
  for (Index p = 0; p < seq_len; ++p) {
    for (Index i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      pe(p, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(p * freq) : std::cos(p * freq));
    }
  }
  return pe;
}

template <typename Scalar>
struct ForwardContext {
  Tape<Scalar>& tape;
  const TransformerWeights<Scalar>& weights;
  const ForwardSpec<Scalar>& spec;
  ForwardGraph<Scalar>& graph;

  Var<Scalar> weight(const std::string& name, const Matrix<Scalar>& m) {
    auto v = tape.leaf(m, spec.train_weights);
    graph.weights.emplace(name, v);
    return v;
  }

  /// x·Wᵀ plus the adapter delta for `name`, if any.
  Var<Scalar> linear(const Var<Scalar>& x, const std::string& name, const Matrix<Scalar>& m) {
    Var<Scalar> w = weight(name, m);
    Var<Scalar> y = matmul_nt(x, w);
    if (spec.adapters == nullptr) return y;
    const auto it = spec.adapters->find(name);
    if (it == spec.adapters->end()) return y;
    const auto& ad = it->second;
    if (ad.b.rows() != m.rows() || ad.a.cols() != m.cols() || ad.b.cols() != ad.a.rows()) {
      throw ShapeError("adapter " + name + " B" + shape_str(ad.b) + " A" + shape_str(ad.a) +
                       " does not fit target " + shape_str(m));
    }
    auto b = tape.leaf(ad.b, spec.train_adapters);
    auto a = tape.leaf(ad.a, spec.train_adapters);
    graph.adapters.emplace(name, std::make_pair(b, a));
    const auto s = static_cast<Scalar>(ad.scaling);

    Var<Scalar> xin = x;
    const double p = weights.config.lora_dropout;
    if (spec.dropout_rng != nullptr && p > 0.0) {
      Matrix<Scalar> keep(x.rows(), x.cols());
      std::bernoulli_distribution coin(1.0 - p);
      for (Index i = 0; i < keep.size(); ++i) {
        keep.data()[i] = coin(*spec.dropout_rng) ? static_cast<Scalar>(1.0 / (1.0 - p)) : Scalar(0);
      }
      xin = hadamard(x, tape.leaf(std::move(keep)));
    }

    const PruneMask* mask = nullptr;
    if (spec.masks != nullptr && spec.mask_mode == DeltaMaskMode::kMasked) {
      const auto mit = spec.masks->find(name);
      if (mit != spec.masks->end()) mask = &mit->second;
    }
    if (mask != nullptr) {
      require_same_shape(*mask, m, ("mask for " + name).c_str());
      auto delta = hadamard(scale(matmul(b, a), s), tape.leaf(mask->template cast<Scalar>()));
      return add(y, matmul_nt(xin, delta));
    }
    return add(y, scale(matmul_nt(matmul_nt(xin, a), b), s));
  }
};

}  // namespace detail

/// Records the full forward pass on `tape`. Logits row b·T+t belongs to
/// position t of sequence b.
template <typename Scalar>
ForwardGraph<Scalar> forward(Tape<Scalar>& tape, const TransformerWeights<Scalar>& w,
                             const TokenBatch& tokens, const ForwardSpec<Scalar>& spec = {}) {
  const auto& cfg = w.config;
  if (tokens.seq_len < 1 || tokens.seq_len > cfg.max_seq) {
    throw ShapeError("forward: sequence length " + std::to_string(tokens.seq_len) +
                     " outside [1, " + std::to_string(cfg.max_seq) + "]");
  }
  if (tokens.ids.empty() || tokens.ids.size() % static_cast<std::size_t>(tokens.seq_len) != 0) {
    throw ShapeError("forward: token count is not a multiple of seq_len");
  }
  if (spec.adapters != nullptr) {
    for (const auto& [name, ad] : *spec.adapters) {
      (void)w.target(name);  // rejects unknown target names
    }
  }

  ForwardGraph<Scalar> graph;
  detail::ForwardContext<Scalar> ctx{tape, w, spec, graph};
  const auto eps = static_cast<Scalar>(cfg.norm_eps);

  Var<Scalar> h = embedding(ctx.weight("embed", w.embed), std::span<const std::int32_t>(tokens.ids));
  if (cfg.position == PositionEncoding::kSinusoidal) {
    Matrix<Scalar> pe = detail::sinusoidal_positions<Scalar>(tokens.seq_len, cfg.d_model)
                            .replicate(tokens.batch(), 1);
    h = add(h, tape.leaf(std::move(pe)));
  }

  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    auto x = rmsnorm(h, ctx.weight(p + "attn_norm", L.attn_norm), eps);
    auto q = ctx.linear(x, p + "q", L.q);
    auto k = ctx.linear(x, p + "k", L.k);
    auto v = ctx.linear(x, p + "v", L.v);
    auto att = causal_attention(q, k, v, w.heads_in_layer(l), tokens.seq_len);
    h = add(h, ctx.linear(att, p + "o", L.o));

    auto y = rmsnorm(h, ctx.weight(p + "mlp_norm", L.mlp_norm), eps);
    auto gated = hadamard(silu(ctx.linear(y, p + "gate", L.gate)), ctx.linear(y, p + "up", L.up));
    h = add(h, ctx.linear(gated, p + "down", L.down));
  }

  auto out = rmsnorm(h, ctx.weight("final_norm", w.final_norm), eps);
  graph.logits = ctx.linear(out, "lm_head", w.lm_head);
  return graph;
}

/// Logits [T × vocab] for one sequence, no gradients.
template <typename Scalar>
Matrix<Scalar> forward_logits(const TransformerWeights<Scalar>& w, std::span<const std::int32_t> tokens,
                              const AdapterSet<Scalar>* adapters = nullptr,
                              const MaskSet* masks = nullptr,
                              DeltaMaskMode mode = DeltaMaskMode::kMasked) {
  Tape<Scalar> tape;
  TokenBatch batch{static_cast<Index>(tokens.size()), {tokens.begin(), tokens.end()}};
  ForwardSpec<Scalar> spec;
  spec.adapters = adapters;
  spec.masks = masks;
  spec.mask_mode = mode;
  return forward(tape, w, batch, spec).logits.value();
}

/// Mean next-token cross-entropy and its gradient for every weight tensor.
template <typename Scalar>
struct LossAndGrads {
  Scalar loss = 0;
  TransformerWeights<Scalar> grads;
};

template <typename Scalar>
LossAndGrads<Scalar> weight_gradients(const TransformerWeights<Scalar>& w, const LmBatch& batch) {
  Tape<Scalar> tape;
  ForwardSpec<Scalar> spec;
  spec.train_weights = true;
  auto graph = forward(tape, w, batch.inputs, spec);
  auto loss = cross_entropy(graph.logits, std::span<const std::int32_t>(batch.targets));
  tape.backward(loss);
  LossAndGrads<Scalar> out;
  out.loss = loss.value()(0, 0);
  out.grads = w;
  out.grads.for_each([&](const std::string& name, Matrix<Scalar>& g) {
    const auto& v = graph.weights.at(name);
    if (v.grad().size() == 0) {
      g.setZero();
    } else {
      g = v.grad();
    }
  });
  return out;
}

}  // namespace loram
