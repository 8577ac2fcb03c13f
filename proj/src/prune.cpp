// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "loram/rng.hpp"

namespace loram {

namespace {

constexpr TargetKind kLayerKinds[] = {TargetKind::kQ,  TargetKind::kK,    TargetKind::kV,
                                      TargetKind::kO,  TargetKind::kUp,   TargetKind::kGate,
                                      TargetKind::kDown};

bool is_head_target(TargetKind k) {
  return k == TargetKind::kQ || k == TargetKind::kK || k == TargetKind::kV || k == TargetKind::kO;
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<int> protected_set(int n_layers, ProtectedLayers protect) {
  if (protect.first < 0 || protect.last < 0) throw ConfigError("protected layer counts must be >= 0");
  std::set<int> s;
  for (int l = 0; l < std::min(protect.first, n_layers); ++l) s.insert(l);
  for (int l = std::max(0, n_layers - protect.last); l < n_layers; ++l) s.insert(l);
  return {s.begin(), s.end()};
}

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("pruning ratio must be in [0, 1), got " + std::to_string(ratio));
  }
}

/// Expands unit indices into the matrix indices they cover.
std::vector<Index> expand_units(const std::vector<int>& units, Index width) {
  std::vector<Index> out;
  out.reserve(units.size() * static_cast<std::size_t>(width));
  for (int u : units) {
    for (Index i = 0; i < width; ++i) out.push_back(static_cast<Index>(u) * width + i);
  }
  return out;
}

std::vector<Index> all_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

/// Removes the `k` lowest-score units; ties remove the lower index first.
std::vector<int> keep_highest(const std::vector<double>& score, int k) {
  std::vector<int> order = iota_vec(static_cast<int>(score.size()));
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)]; });
  std::vector<int> kept(order.begin() + k, order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "rand";
    case Strategy::kGradient: return "stru";
    case Strategy::kSemi: return "semi";
    case Strategy::kUnstructured: return "unst";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  for (auto st : {Strategy::kRandom, Strategy::kGradient, Strategy::kSemi, Strategy::kUnstructured}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown pruning strategy '" + std::string(s) + "' (rand|stru|semi|unst)");
}

bool StructuredPlan::is_protected(int layer) const {
  return std::find(protected_layers.begin(), protected_layers.end(), layer) != protected_layers.end();
}

void StructuredPlan::validate(const ModelConfig& cfg) const {
  if (layers.size() != static_cast<std::size_t>(cfg.n_layers)) {
    throw ShapeError("plan has " + std::to_string(layers.size()) + " layers, model has " +
                     std::to_string(cfg.n_layers));
  }
  auto check = [](const std::vector<int>& v, int n, const std::string& what) {
    if (v.empty()) throw ShapeError(what + ": retained set is empty");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0 || v[i] >= n) throw ShapeError(what + ": index out of range");
      if (i > 0 && v[i] <= v[i - 1]) throw ShapeError(what + ": indices must be strictly ascending");
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    check(layers[l].heads, cfg.n_heads, "layer " + std::to_string(l) + " heads");
    check(layers[l].channels, cfg.d_ff, "layer " + std::to_string(l) + " channels");
  }
}

void to_json(nlohmann::json& j, const StructuredPlan& p) {
  j = nlohmann::json::object();
  j["strategy"] = std::string(to_string(p.strategy));
  j["ratio"] = p.ratio;
  j["seed"] = p.seed;
  j["protected_layers"] = p.protected_layers;
  auto layers = nlohmann::json::array();
  for (const auto& l : p.layers) layers.push_back({{"heads", l.heads}, {"channels", l.channels}});
  j["layers"] = layers;
}

void from_json(const nlohmann::json& j, StructuredPlan& p) {
  p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  p.ratio = j.at("ratio").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.protected_layers = j.at("protected_layers").get<std::vector<int>>();
  p.layers.clear();
  for (const auto& l : j.at("layers")) {
    p.layers.push_back({l.at("heads").get<std::vector<int>>(), l.at("channels").get<std::vector<int>>()});
  }
}

std::string plan_to_text(const StructuredPlan& plan) {
  nlohmann::json j = plan;
  return j.dump(2) + "\n";
}

int units_to_remove(double ratio, int total) {
  check_ratio(ratio);
  // The epsilon absorbs representation error such as 0.3 * 10 = 2.9999999999999996.
  return static_cast<int>(std::floor(ratio * total + 1e-9));
}

PruneMask gen_mask_unstructured(const MatrixF& w, double ratio) {
  check_ratio(ratio);
  const auto n = static_cast<std::size_t>(w.size());
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(w.data()[a]) < std::abs(w.data()[b]);
  });
  PruneMask m = PruneMask::Ones(w.rows(), w.cols());
  for (std::size_t i = 0; i < k; ++i) m.data()[order[i]] = 0;
  return m;
}

PruneMask gen_mask_semi(const MatrixF& w, int n, int m) {
  if (m < 1 || n < 0 || n >= m) throw ConfigError("semi-structured pattern needs 0 <= n < m");
  if (w.cols() % m != 0) {
    throw ShapeError("semi-structured " + std::to_string(n) + ":" + std::to_string(m) +
                     " needs the input dimension (" + std::to_string(w.cols()) + ") divisible by m");
  }
  PruneMask mask = PruneMask::Zero(w.rows(), w.cols());
  std::vector<int> order(static_cast<std::size_t>(m));
  for (Index r = 0; r < w.rows(); ++r) {
    for (Index g = 0; g < w.cols(); g += m) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return std::abs(w(r, g + a)) > std::abs(w(r, g + b)); });
      for (int i = 0; i < n; ++i) mask(r, g + order[static_cast<std::size_t>(i)]) = 1;
    }
  }
  return mask;
}

MaskSet gen_masks_unstructured(const TransformerWeights<float>& w, double ratio) {
  MaskSet out;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for (auto k : kLayerKinds) {
      out[target_name(static_cast<int>(l), k)] = gen_mask_unstructured(w.layers[l].matrix(k), ratio);
    }
  }
  return out;
}

MaskSet gen_masks_semi(const TransformerWeights<float>& w, int n, int m) {
  MaskSet out;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for (auto k : kLayerKinds) {
      out[target_name(static_cast<int>(l), k)] = gen_mask_semi(w.layers[l].matrix(k), n, m);
    }
  }
  return out;
}

StructuredPlan gen_plan_structured_random(const ModelConfig& cfg, double ratio, ProtectedLayers protect,
                                          std::uint64_t seed) {
  cfg.validate();
  const int drop_heads = units_to_remove(ratio, cfg.n_heads);
  const int drop_channels = units_to_remove(ratio, cfg.d_ff);
  if (drop_heads >= cfg.n_heads || drop_channels >= cfg.d_ff) {
    throw ConfigError("pruning ratio removes every head or channel");
  }
  StructuredPlan plan;
  plan.strategy = Strategy::kRandom;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.protected_layers = protected_set(cfg.n_layers, protect);

  // Partial Fisher-Yates: the first `drop` slots after shuffling are removed.
  auto sample_kept = [](std::mt19937_64& rng, int total, int drop) {
    std::vector<int> idx = iota_vec(total);
    for (int i = 0; i < drop; ++i) {
      const auto j = i + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(total - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    std::vector<int> kept(idx.begin() + drop, idx.end());
    std::sort(kept.begin(), kept.end());
    return kept;
  };

  for (int l = 0; l < cfg.n_layers; ++l) {
    if (plan.is_protected(l)) {
      plan.layers.push_back({iota_vec(cfg.n_heads), iota_vec(cfg.d_ff)});
      continue;
    }
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(l)));
    LayerPlan lp;
    lp.heads = sample_kept(rng, cfg.n_heads, drop_heads);
    lp.channels = sample_kept(rng, cfg.d_ff, drop_channels);
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

GroupImportance coupled_importance(const TransformerWeights<float>& w, const TransformerWeights<float>& grads) {
  const Index hd = w.config.head_dim();
  GroupImportance imp;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const auto& G = grads.layers[l];
    auto salience = [](const MatrixF& a, const MatrixF& b) {
      return a.cast<double>().cwiseProduct(b.cast<double>()).cwiseAbs();
    };
    const MatrixD sq = salience(L.q, G.q), sk = salience(L.k, G.k), sv = salience(L.v, G.v);
    const MatrixD so = salience(L.o, G.o);
    const MatrixD su = salience(L.up, G.up), sg = salience(L.gate, G.gate), sd = salience(L.down, G.down);

    const int heads = w.heads_in_layer(l);
    std::vector<double> h(static_cast<std::size_t>(heads));
    for (int i = 0; i < heads; ++i) {
      h[static_cast<std::size_t>(i)] = sq.middleRows(i * hd, hd).sum() + sk.middleRows(i * hd, hd).sum() +
                                       sv.middleRows(i * hd, hd).sum() + so.middleCols(i * hd, hd).sum();
    }
    const int ch = w.channels_in_layer(l);
    std::vector<double> c(static_cast<std::size_t>(ch));
    for (int i = 0; i < ch; ++i) {
      c[static_cast<std::size_t>(i)] = su.row(i).sum() + sg.row(i).sum() + sd.col(i).sum();
    }
    imp.heads.push_back(std::move(h));
    imp.channels.push_back(std::move(c));
  }
  return imp;
}

StructuredPlan gen_plan_structured_gradient(const TransformerWeights<float>& w, const LmBatch& calibration,
                                            double ratio, ProtectedLayers protect, std::uint64_t seed) {
  if (calibration.targets.empty()) throw ConfigError("calibration batch is empty");
  const auto& cfg = w.config;
  const int drop_heads = units_to_remove(ratio, cfg.n_heads);
  const int drop_channels = units_to_remove(ratio, cfg.d_ff);
  if (drop_heads >= cfg.n_heads || drop_channels >= cfg.d_ff) {
    throw ConfigError("pruning ratio removes every head or channel");
  }
  StructuredPlan plan;
  plan.strategy = Strategy::kGradient;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.protected_layers = protected_set(cfg.n_layers, protect);
  if (ratio == 0.0) {
    for (int l = 0; l < cfg.n_layers; ++l) plan.layers.push_back({iota_vec(cfg.n_heads), iota_vec(cfg.d_ff)});
    return plan;
  }

  const auto lg = weight_gradients(w, calibration);
  const auto imp = coupled_importance(w, lg.grads);
  bool any_signal = false;
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (plan.is_protected(l)) continue;
    const auto li = static_cast<std::size_t>(l);
    for (double v : imp.heads[li]) any_signal = any_signal || v != 0.0;
    for (double v : imp.channels[li]) any_signal = any_signal || v != 0.0;
  }
  if (!any_signal && cfg.n_layers > static_cast<int>(plan.protected_layers.size())) {
    throw NumericalError("calibration gradients are all zero on prunable groups");
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (plan.is_protected(l)) {
      plan.layers.push_back({iota_vec(cfg.n_heads), iota_vec(cfg.d_ff)});
      continue;
    }
    const auto li = static_cast<std::size_t>(l);
    plan.layers.push_back({keep_highest(imp.heads[li], drop_heads), keep_highest(imp.channels[li], drop_channels)});
  }
  return plan;
}

void apply_masks(TransformerWeights<float>& w, const MaskSet& masks) {
  for (const auto& [name, m] : masks) {
    auto& t = w.target(name);
    t = apply_mask(t, m);
  }
}

std::pair<Index, Index> full_shape(const ModelConfig& cfg, TargetKind kind) {
  const Index d = cfg.d_model, ff = cfg.d_ff;
  switch (kind) {
    case TargetKind::kQ:
    case TargetKind::kK:
    case TargetKind::kV:
    case TargetKind::kO: return {d, d};
    case TargetKind::kUp:
    case TargetKind::kGate: return {ff, d};
    case TargetKind::kDown: return {d, ff};
    case TargetKind::kLmHead: return {cfg.vocab, d};
  }
  return {0, 0};
}

TargetIndex target_index(const StructuredPlan& plan, const ModelConfig& cfg, std::string_view target) {
  const auto ref = parse_target(target);
  const auto [rows, cols] = full_shape(cfg, ref.kind);
  TargetIndex idx{all_indices(rows), all_indices(cols)};
  if (ref.kind == TargetKind::kLmHead) return idx;
  if (ref.layer >= static_cast<int>(plan.layers.size())) {
    throw ShapeError("plan has no layer for target '" + std::string(target) + "'");
  }
  const auto& lp = plan.layers[static_cast<std::size_t>(ref.layer)];
  auto units = is_head_target(ref.kind) ? expand_units(lp.heads, cfg.head_dim()) : expand_units(lp.channels, 1);
  if (indexes_units_by_row(ref.kind)) {
    idx.rows = std::move(units);
  } else {
    idx.cols = std::move(units);
  }
  return idx;
}

MaskSet plan_to_masks(const StructuredPlan& plan, const ModelConfig& cfg) {
  plan.validate(cfg);
  MaskSet out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (auto k : kLayerKinds) {
      const auto name = target_name(l, k);
      const auto idx = target_index(plan, cfg, name);
      const auto [rows, cols] = full_shape(cfg, k);
      PruneMask m = PruneMask::Zero(rows, cols);
      m(idx.rows, idx.cols).setOnes();
      out[name] = std::move(m);
    }
  }
  return out;
}

template <typename Scalar>
TransformerWeights<Scalar> compact(const TransformerWeights<Scalar>& w, const StructuredPlan& plan) {
  const auto& cfg = w.config;
  plan.validate(cfg);
  TransformerWeights<Scalar> out = w;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& dst = out.layers[static_cast<std::size_t>(l)];
    const auto& src = w.layers[static_cast<std::size_t>(l)];
    for (auto k : kLayerKinds) {
      const auto [rows, cols] = full_shape(cfg, k);
      const auto& m = src.matrix(k);
      if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError("compact: " + target_name(l, k) + " is not full-shaped");
      }
      const auto idx = target_index(plan, cfg, target_name(l, k));
      dst.matrix(k) = m(idx.rows, idx.cols);
    }
  }
  return out;
}

template <typename Scalar>
TransformerWeights<Scalar> expand(const TransformerWeights<Scalar>& compacted, const StructuredPlan& plan) {
  const auto& cfg = compacted.config;
  plan.validate(cfg);
  TransformerWeights<Scalar> out = compacted;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& dst = out.layers[static_cast<std::size_t>(l)];
    const auto& src = compacted.layers[static_cast<std::size_t>(l)];
    for (auto k : kLayerKinds) {
      const auto [rows, cols] = full_shape(cfg, k);
      const auto idx = target_index(plan, cfg, target_name(l, k));
      const auto& m = src.matrix(k);
      if (m.rows() != static_cast<Index>(idx.rows.size()) || m.cols() != static_cast<Index>(idx.cols.size())) {
        throw ShapeError("expand: " + target_name(l, k) + " " + shape_str(m) + " does not match the plan");
      }
      Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
      full(idx.rows, idx.cols) = m;
      dst.matrix(k) = std::move(full);
    }
  }
  return out;
}

template TransformerWeights<float> compact(const TransformerWeights<float>&, const StructuredPlan&);
template TransformerWeights<double> compact(const TransformerWeights<double>&, const StructuredPlan&);
template TransformerWeights<float> expand(const TransformerWeights<float>&, const StructuredPlan&);
template TransformerWeights<double> expand(const TransformerWeights<double>&, const StructuredPlan&);

AdapterSet<float> gather_adapters(const AdapterSet<float>& full, const StructuredPlan& plan,
                                  const ModelConfig& cfg) {
  plan.validate(cfg);
  AdapterSet<float> out;
  for (const auto& [name, ad] : full) {
    const auto idx = target_index(plan, cfg, name);
    const auto [rows, cols] = full_shape(cfg, parse_target(name).kind);
    if (ad.b.rows() != rows || ad.a.cols() != cols) {
      throw ShapeError("gather_adapters: " + name + " is not full-shaped");
    }
    LoraAdapter<float> g = ad;
    g.b = ad.b(idx.rows, Eigen::indexing::all);
    g.a = ad.a(Eigen::indexing::all, idx.cols);
    out.emplace(name, std::move(g));
  }
  return out;
}

std::int64_t count_params(const ModelConfig& cfg, const StructuredPlan& plan, bool include_norms) {
  plan.validate(cfg);
  const std::int64_t d = cfg.d_model, v = cfg.vocab, hd = cfg.head_dim();
  std::int64_t n = 2 * v * d + (include_norms ? (2 * static_cast<std::int64_t>(cfg.n_layers) + 1) * d : 0);
  for (const auto& lp : plan.layers) {
    n += 4 * d * hd * static_cast<std::int64_t>(lp.heads.size());
    n += 3 * d * static_cast<std::int64_t>(lp.channels.size());
  }
  return n;
}

}  // namespace loram
