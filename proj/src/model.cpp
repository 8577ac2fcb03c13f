// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/model.hpp"

#include <algorithm>
#include <charconv>

namespace loram {

namespace {

constexpr TargetKind kLayerKinds[] = {TargetKind::kQ,  TargetKind::kK,    TargetKind::kV,
                                      TargetKind::kO,  TargetKind::kUp,   TargetKind::kGate,
                                      TargetKind::kDown};

}  // namespace

std::string_view to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::kQ: return "q";
    case TargetKind::kK: return "k";
    case TargetKind::kV: return "v";
    case TargetKind::kO: return "o";
    case TargetKind::kUp: return "up";
    case TargetKind::kGate: return "gate";
    case TargetKind::kDown: return "down";
    case TargetKind::kLmHead: return "lm_head";
  }
  return "?";
}

TargetKind target_kind_from_string(std::string_view s) {
  for (auto k : kLayerKinds) {
    if (to_string(k) == s) return k;
  }
  if (s == "lm_head") return TargetKind::kLmHead;
  throw ConfigError("unknown LoRA target kind '" + std::string(s) + "'");
}

bool indexes_units_by_row(TargetKind kind) {
  return kind != TargetKind::kO && kind != TargetKind::kDown;
}

bool ModelConfig::targets(TargetKind kind) const {
  return std::find(lora_targets.begin(), lora_targets.end(), kind) != lora_targets.end();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (d_model < 1 || n_heads < 1 || d_ff < 1 || vocab < 1 || max_seq < 1 || lora_rank < 1) {
    fail("dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (lora_rank >= std::min(d_model, d_ff)) fail("lora_rank must be < min(d_model, d_ff)");
  if (!(lora_alpha > 0)) fail("lora_alpha must be positive");
  if (lora_dropout < 0 || lora_dropout >= 1) fail("lora_dropout must be in [0, 1)");
  if (!(norm_eps > 0)) fail("norm_eps must be positive");
}

std::vector<TargetKind> ModelConfig::preset_targets(std::string_view preset) {
  std::vector<TargetKind> out(std::begin(kLayerKinds), std::end(kLayerKinds));
  if (preset == "llama2") {
    out.push_back(TargetKind::kLmHead);
  } else if (preset != "llama3") {
    throw ConfigError("unknown target preset '" + std::string(preset) + "'");
  }
  return out;
}

std::string target_name(int layer, TargetKind kind) {
  if (kind == TargetKind::kLmHead) return "lm_head";
  return "layers." + std::to_string(layer) + "." + std::string(to_string(kind));
}

TargetRef parse_target(std::string_view name) {
  if (name == "lm_head") return {-1, TargetKind::kLmHead};
  constexpr std::string_view prefix = "layers.";
  if (name.substr(0, prefix.size()) != prefix) {
    throw ShapeError("unknown target '" + std::string(name) + "'");
  }
  const auto rest = name.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) throw ShapeError("unknown target '" + std::string(name) + "'");
  int layer = -1;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + dot, layer);
  if (ec != std::errc{} || ptr != rest.data() + dot || layer < 0) {
    throw ShapeError("unknown target '" + std::string(name) + "'");
  }
  const auto kind_str = rest.substr(dot + 1);
  for (auto k : kLayerKinds) {
    if (to_string(k) == kind_str) return {layer, k};
  }
  throw ShapeError("unknown target '" + std::string(name) + "'");
}

template <typename Scalar>
Matrix<Scalar>& LayerWeights<Scalar>::matrix(TargetKind kind) {
  switch (kind) {
    case TargetKind::kQ: return q;
    case TargetKind::kK: return k;
    case TargetKind::kV: return v;
    case TargetKind::kO: return o;
    case TargetKind::kUp: return up;
    case TargetKind::kGate: return gate;
    case TargetKind::kDown: return down;
    case TargetKind::kLmHead: break;
  }
  throw ShapeError("lm_head is not a layer matrix");
}

template <typename Scalar>
const Matrix<Scalar>& LayerWeights<Scalar>::matrix(TargetKind kind) const {
  return const_cast<LayerWeights*>(this)->matrix(kind);
}

template <typename Scalar>
Matrix<Scalar>& TransformerWeights<Scalar>::target(std::string_view name) {
  const auto ref = parse_target(name);
  if (ref.kind == TargetKind::kLmHead) return lm_head;
  if (ref.layer >= static_cast<int>(layers.size())) {
    throw ShapeError("target '" + std::string(name) + "' beyond layer count");
  }
  return layers[static_cast<std::size_t>(ref.layer)].matrix(ref.kind);
}

template <typename Scalar>
const Matrix<Scalar>& TransformerWeights<Scalar>::target(std::string_view name) const {
  return const_cast<TransformerWeights*>(this)->target(name);
}

template <typename Scalar>
Matrix<Scalar>* TransformerWeights<Scalar>::find(std::string_view name) {
  Matrix<Scalar>* hit = nullptr;
  for_each([&](const std::string& n, Matrix<Scalar>& m) {
    if (n == name) hit = &m;
  });
  return hit;
}

template <typename Scalar>
const Matrix<Scalar>* TransformerWeights<Scalar>::find(std::string_view name) const {
  return const_cast<TransformerWeights*>(this)->find(name);
}

template <typename Scalar>
void TransformerWeights<Scalar>::check_shapes() const {
  const auto& c = config;
  const Index d = c.d_model, hd = c.head_dim();
  auto expect = [](const Matrix<Scalar>& m, Index r, Index cols, const std::string& what) {
    if (m.rows() != r || m.cols() != cols) {
      throw ShapeError(what + ": expected [" + std::to_string(r) + "x" + std::to_string(cols) +
                       "], got " + shape_str(m));
    }
  };
  if (layers.size() != static_cast<std::size_t>(c.n_layers)) {
    throw ShapeError("weights hold " + std::to_string(layers.size()) + " layers, config says " +
                     std::to_string(c.n_layers));
  }
  expect(embed, c.vocab, d, "embed");
  expect(final_norm, 1, d, "final_norm");
  expect(lm_head, c.vocab, d, "lm_head");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    const Index width = L.q.rows();
    const Index ch = L.up.rows();
    if (width < hd || width % hd != 0 || width > d) {
      throw ShapeError(p + "q: head width " + std::to_string(width) + " invalid");
    }
    if (ch < 1 || ch > c.d_ff) throw ShapeError(p + "up: channel count invalid");
    expect(L.q, width, d, p + "q");
    expect(L.k, width, d, p + "k");
    expect(L.v, width, d, p + "v");
    expect(L.o, d, width, p + "o");
    expect(L.up, ch, d, p + "up");
    expect(L.gate, ch, d, p + "gate");
    expect(L.down, d, ch, p + "down");
    expect(L.attn_norm, 1, d, p + "attn_norm");
    expect(L.mlp_norm, 1, d, p + "mlp_norm");
  }
}

template struct LayerWeights<float>;
template struct LayerWeights<double>;
template struct TransformerWeights<float>;
template struct TransformerWeights<double>;

TransformerWeights<float> init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto randn = [&](Index r, Index c) {
    MatrixF m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(normal(rng));
    return m;
  };
  const Index d = cfg.d_model, ff = cfg.d_ff;
  TransformerWeights<float> w;
  w.config = cfg;
  w.embed = randn(cfg.vocab, d);
  w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& L : w.layers) {
    L.q = randn(d, d);
    L.k = randn(d, d);
    L.v = randn(d, d);
    L.o = randn(d, d);
    L.up = randn(ff, d);
    L.gate = randn(ff, d);
    L.down = randn(d, ff);
    L.attn_norm = MatrixF::Ones(1, d);
    L.mlp_norm = MatrixF::Ones(1, d);
  }
  w.final_norm = MatrixF::Ones(1, d);
  w.lm_head = MatrixF::Zero(cfg.vocab, d);
  return w;
}

std::int64_t count_params(const TransformerWeights<float>& w, bool include_norms) {
  std::int64_t n = 0;
  w.for_each([&](const std::string& name, const MatrixF& m) {
    const bool is_norm = name.ends_with("_norm");
    if (include_norms || !is_norm) n += m.size();
  });
  return n;
}

std::int64_t count_params(const ModelConfig& cfg, bool include_norms) {
  const std::int64_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab, L = cfg.n_layers;
  const std::int64_t norms = include_norms ? (2 * L + 1) * d : 0;
  return 2 * v * d + L * (4 * d * d + 3 * d * ff) + norms;
}

std::uint64_t fingerprint(const TransformerWeights<float>& w) {
  std::uint64_t h = 1469598103934665603ULL;
  w.for_each([&](const std::string&, const MatrixF& m) { h = fingerprint(m, h); });
  return h;
}

AdapterSet<float> init_adapters(const TransformerWeights<float>& w, std::uint64_t seed) {
  const auto& cfg = w.config;
  AdapterSet<float> out;
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  auto make = [&](const std::string& name, const MatrixF& target) {
    const Index r = cfg.lora_rank;
    const double bound = 1.0 / std::sqrt(static_cast<double>(target.cols()));
    std::uniform_real_distribution<double> uni(-bound, bound);
    LoraAdapter<float> ad;
    ad.target = name;
    ad.b = MatrixF::Zero(target.rows(), r);
    ad.a.resize(r, target.cols());
    for (Index i = 0; i < ad.a.size(); ++i) ad.a.data()[i] = static_cast<float>(uni(rng));
    ad.scaling = cfg.lora_scaling();
    out.emplace(name, std::move(ad));
  };
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for (auto kind : kLayerKinds) {
      if (!cfg.targets(kind)) continue;
      make(target_name(static_cast<int>(l), kind), w.layers[l].matrix(kind));
    }
  }
  if (cfg.targets(TargetKind::kLmHead)) make("lm_head", w.lm_head);
  return out;
}

std::vector<std::int32_t> tokenize(std::string_view text) {
  std::vector<std::int32_t> ids(text.size());
  std::transform(text.begin(), text.end(), ids.begin(),
                 [](char c) { return static_cast<std::int32_t>(static_cast<unsigned char>(c)); });
  return ids;
}

std::string detokenize(std::span<const std::int32_t> ids) {
  std::string out(ids.size(), '\0');
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] > 255) throw ShapeError("detokenize: id outside byte range");
    out[i] = static_cast<char>(static_cast<unsigned char>(ids[i]));
  }
  return out;
}

LmBatch make_lm_batch(std::span<const std::int32_t> windows, Index window_len) {
  if (window_len < 2 || windows.empty() || windows.size() % static_cast<std::size_t>(window_len) != 0) {
    throw ShapeError("make_lm_batch: windows must hold whole windows of >= 2 tokens");
  }
  const auto n = windows.size() / static_cast<std::size_t>(window_len);
  const auto wl = static_cast<std::size_t>(window_len);
  LmBatch out;
  out.inputs.seq_len = window_len - 1;
  out.inputs.ids.reserve(n * (wl - 1));
  out.targets.reserve(n * (wl - 1));
  for (std::size_t b = 0; b < n; ++b) {
    const auto* w = windows.data() + b * wl;
    out.inputs.ids.insert(out.inputs.ids.end(), w, w + wl - 1);
    out.targets.insert(out.targets.end(), w + 1, w + wl);
  }
  return out;
}

}  // namespace loram
