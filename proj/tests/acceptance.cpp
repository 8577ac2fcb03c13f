// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gradchecks.hpp"
#include "loram/container.hpp"
#include "loram/eval.hpp"
#include "loram/loram.hpp"
#include "loram/prune.hpp"
#include "loram/quantize.hpp"
#include "testing.hpp"

using namespace loram;
using namespace loram::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool same_bits(float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }

bool same_bits(const MatrixF& a, const MatrixF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

/// Toy-config model with every tensor random, so that logits depend on every
/// head and channel.
TransformerWeights<float> random_toy_model(std::uint64_t seed) {
  auto w = init_model(ModelConfig{});
  randomize(w, seed * 1000, 0.15);
  return w;
}

// ---------------------------------------------------------------------------
// 1. Accounting fixtures

Outcome accounting_fixtures() {
  struct Row {
    std::int64_t orig, pruned;
    int bits;
    const char* reduction;
    const char* hbm;
  };
  const std::int64_t l13 = 13015864320, l70 = 68976648192, l31 = 70553706496;
  const Row rows[] = {
      {l13, 6738415616, 16, "1.93", "12.55"},  {l13, 6037628912, 16, "2.16", "11.25"},
      {l13, 6005662720, 16, "2.17", "11.19"},  {l70, 28099436544, 16, "2.45", "52.34"},
      {l70, 21488738304, 16, "3.21", "40.03"}, {l70, 16272924672, 16, "4.24", "30.31"},
      {l70, 9662226432, 16, "7.14", "18.00"},  {l31, 17849982976, 16, "3.95", "33.25"},
      {l70, 28099436544, 4, "9.82", "13.08"},  {l70, 21488738304, 4, "12.84", "10.01"},
      {l70, 16272924672, 4, "16.95", "7.58"},  {l70, 9662226432, 4, "28.56", "4.50"},
      {l31, 17849982976, 4, "15.81", "8.31"},
  };
  const auto t0 = std::chrono::steady_clock::now();
  int ok = 0;
  std::string mismatch;
  for (const auto& r : rows) {
    const auto a = accounting(r.orig, r.pruned, r.bits);
    if (a.reduction_str() == r.reduction && a.hbm_str() == r.hbm) {
      ++ok;
    } else if (mismatch.empty()) {
      mismatch = " first mismatch " + std::to_string(r.pruned) + ": " + a.reduction_str() + "/" + a.hbm_str();
    }
  }
  const double t = seconds_since(t0);
  const int n = static_cast<int>(std::size(rows));
  return {ok == n && t < 1.0, std::to_string(ok) + "/" + std::to_string(n) + " rows exact, " + fmt(t, 2) + " s" +
                                  mismatch};
}

// ---------------------------------------------------------------------------
// 2. Mask algebra

Outcome mask_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 50;
  int failures = 0;
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 16;
  c.n_heads = 4;
  c.d_ff = 24;
  c.vocab = 32;
  c.max_seq = 16;
  c.lora_rank = 2;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    // Semi-structured 4:8: exactly four survivors per group, the largest.
    const MatrixF w = random_matrix<float>(8, 64, seed);
    const PruneMask semi = gen_mask_semi(w, 4, 8);
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index g = 0; g < w.cols(); g += 8) {
        float min_kept = INFINITY, max_dropped = 0;
        int kept = 0;
        for (Index j = g; j < g + 8; ++j) {
          const float a = std::abs(w(r, j));
          if (semi(r, j)) {
            ++kept;
            min_kept = std::min(min_kept, a);
          } else {
            max_dropped = std::max(max_dropped, a);
          }
        }
        failures += kept != 4 || min_kept < max_dropped;
      }
    }

    // Unstructured: popcount and pruned set against a full sort.
    const MatrixF u = random_matrix<float>(16, 16, seed + 1000);
    const double ratio = 0.05 + 0.9 * static_cast<double>(seed % 17) / 16.0;
    const PruneMask um = gen_mask_unstructured(u, ratio);
    const Index k = static_cast<Index>(std::floor(ratio * static_cast<double>(u.size()) + 1e-9));
    std::vector<std::pair<float, Index>> order;
    for (Index i = 0; i < u.size(); ++i) order.emplace_back(std::abs(u.data()[i]), i);
    std::sort(order.begin(), order.end());
    std::set<Index> expected_pruned;
    for (Index i = 0; i < k; ++i) expected_pruned.insert(order[static_cast<std::size_t>(i)].second);
    std::set<Index> pruned;
    for (Index i = 0; i < um.size(); ++i) {
      if (um.data()[i] == 0) pruned.insert(i);
    }
    failures += popcount(um) != u.size() - k || pruned != expected_pruned;

    // Structured coupling and compact/expand duality.
    const auto model = [&] {
      auto m = init_model(c);
      randomize(m, seed, 0.4);
      return m;
    }();
    const auto plan = gen_plan_structured_random(c, 0.5, {1, 1}, seed);
    const MaskSet masks = plan_to_masks(plan, c);
    for (int l = 0; l < c.n_layers; ++l) {
      const auto& q = masks.at(target_name(l, TargetKind::kQ));
      const auto& o = masks.at(target_name(l, TargetKind::kO));
      for (int h = 0; h < c.n_heads; ++h) {
        const bool q_on = q.middleRows(h * c.head_dim(), c.head_dim()).cast<int>().sum() > 0;
        const bool o_on = o.middleCols(h * c.head_dim(), c.head_dim()).cast<int>().sum() > 0;
        const auto& heads = plan.layers[static_cast<std::size_t>(l)].heads;
        const bool planned = std::find(heads.begin(), heads.end(), h) != heads.end();
        failures += q_on != o_on || q_on != planned;
      }
      const auto& up = masks.at(target_name(l, TargetKind::kUp));
      const auto& gate = masks.at(target_name(l, TargetKind::kGate));
      const auto& down = masks.at(target_name(l, TargetKind::kDown));
      for (Index ch = 0; ch < c.d_ff; ++ch) {
        const bool on = up.row(ch).cast<int>().sum() > 0;
        failures += on != (gate.row(ch).cast<int>().sum() > 0) || on != (down.col(ch).cast<int>().sum() > 0);
      }
    }
    auto masked = model;
    apply_masks(masked, masks);
    failures += fingerprint(expand(compact(model, plan), plan)) != fingerprint(masked);

    // apply_mask idempotence.
    const PruneMask m = (random_matrix(6, 10, seed + 2000).array() > 0).cast<std::uint8_t>();
    const MatrixF x = random_matrix<float>(6, 10, seed + 3000);
    failures += !same_bits(apply_mask(apply_mask(x, m), m), apply_mask(x, m));
  }
  const double t = seconds_since(t0);
  return {failures == 0 && t < 10.0,
          std::to_string(kSeeds) + " seeds, " + std::to_string(failures) + " violations, " + fmt(t, 2) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Compact forward equals masked full forward

Outcome compact_equals_masked() {
  const ModelConfig c;  // toy: 4 layers, d_model 64, 4 heads, d_ff 256
  double worst = 0;
  int plans = 0;
  const double ratios[] = {0.25, 0.5, 0.75};
  const ProtectedLayers protects[] = {{1, 1}, {0, 0}, {1, 0}};
  for (std::uint64_t p = 1; p <= 12; ++p) {
    const auto w = random_toy_model(p);
    const auto plan = gen_plan_structured_random(c, ratios[p % 3], protects[(p / 3) % 3], p + 500);
    auto masked = w;
    apply_masks(masked, plan_to_masks(plan, c));
    const auto compacted = compact(w, plan);
    for (std::uint64_t prompt = 1; prompt <= 10; ++prompt) {
      const auto toks = random_tokens(16 + 8 * (prompt % 4), c.vocab, p * 100 + prompt);
      const MatrixF a = forward_logits(compacted, toks);
      const MatrixF b = forward_logits(masked, toks);
      worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
    }
    ++plans;
  }
  return {worst <= 1e-5, std::to_string(plans) + " plans x 10 prompts, max |diff| " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 4. Merge preservation

/// Coordinates of `target` the recovered delta may touch.
PruneMask delta_support(const PipelineResult& r, const ModelConfig& cfg, const std::string& target, Index rows,
                        Index cols) {
  if (r.plan) {
    PruneMask s = PruneMask::Zero(rows, cols);
    const auto idx = target_index(*r.plan, cfg, target);
    for (auto i : idx.rows) {
      for (auto j : idx.cols) s(i, j) = 1;
    }
    return s;
  }
  const auto it = r.recovered->support.find(target);
  return it == r.recovered->support.end() ? PruneMask::Ones(rows, cols) : it->second;
}

Outcome merge_preservation() {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ff = 64;
  c.max_seq = 32;
  c.lora_rank = 4;
  auto base = init_model(c);
  randomize(base, 77, 0.2);
  const auto corpus = random_tokens(4000, c.vocab, 3);

  std::int64_t scanned = 0, outside = 0, changed_outside = 0, changed_inside = 0;
  int runs = 0;
  for (auto strategy : {Strategy::kRandom, Strategy::kGradient, Strategy::kSemi, Strategy::kUnstructured}) {
    for (bool quantized : {false, true}) {
      PipelineConfig p;
      p.flags.quantize = quantized;
      p.prune.strategy = strategy;
      for (TrainConfig* t : {&p.align, &p.sft}) {
        t->steps = 15;
        t->seq_len = 16;
        t->batch_size = 4;
        t->micro_batch = 4;
        t->lr = 1e-2;
        t->seed = 11 + static_cast<std::uint64_t>(runs);
      }
      p.adapter_seed = 5;
      const auto r = run_pipeline(base, corpus, corpus, p);
      ++runs;
      const auto& merged = *r.merged;
      base.for_each([&](const std::string& name, const MatrixF& w0) {
        const MatrixF& wm = *merged.find(name);
        const bool adapted = r.recovered->factors.count(name) > 0;
        const PruneMask support =
            adapted ? delta_support(r, c, name, w0.rows(), w0.cols()) : PruneMask::Zero(w0.rows(), w0.cols());
        for (Index i = 0; i < w0.size(); ++i) {
          ++scanned;
          const bool same = same_bits(w0.data()[i], wm.data()[i]);
          if (support.data()[i] == 0) {
            ++outside;
            changed_outside += !same;
          } else {
            changed_inside += !same;
          }
        }
      });
    }
  }
  return {changed_outside == 0 && changed_inside > 0,
          std::to_string(runs) + " runs, " + std::to_string(scanned) + " coordinates scanned, " +
              std::to_string(outside) + " outside support, " + std::to_string(changed_outside) + " changed there"};
}

// ---------------------------------------------------------------------------
// 5. Zero-init equivalence

Outcome zero_init_equivalence() {
  int cases = 0, identical = 0;
  const ModelConfig c;
  const auto base = random_toy_model(3);
  const auto toks = random_tokens(48, c.vocab, 4);
  const MatrixF reference = forward_logits(base, toks);
  auto check = [&](const TransformerWeights<float>& merged) {
    ++cases;
    identical += same_bits(forward_logits(merged, toks), reference) && fingerprint(merged) == fingerprint(base);
  };
  check(merge(base, init_adapters(base, 1)));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto plan = gen_plan_structured_random(c, 0.5, {1, 1}, seed);
    const auto pruned = compact(base, plan);
    check(merge(base, recover(init_pruned_adapters(pruned, plan, seed), plan, c)));
  }
  for (auto mode : {DeltaMaskMode::kMasked, DeltaMaskMode::kDense}) {
    check(merge(base, recover(init_adapters(base, 2), gen_masks_semi(base, 4, 8), mode)));
    check(merge(base, recover(init_adapters(base, 3), gen_masks_unstructured(base, 0.5), mode)));
  }
  return {identical == cases, std::to_string(identical) + "/" + std::to_string(cases) + " merges logit-bit-identical"};
}

// ---------------------------------------------------------------------------
// 6. Gradient checks

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0, worst_model = 0;
  std::string worst_name;
  std::size_t ops = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& c : op_cases(seed)) {
      const double e = gradcheck(c.fn, c.inputs).max_rel_error;
      ops = std::max(ops, op_cases(seed).size());
      if (e > worst_op) {
        worst_op = e;
        worst_name = c.name;
      }
    }
    worst_model = std::max(worst_model, full_model_gradcheck(seed));
  }
  const double t = seconds_since(t0);
  return {worst_op <= 1e-4 && worst_model <= 1e-4 && t < 60.0,
          std::to_string(ops) + " ops and full model x 20 seeds; max rel err ops " + fmt(worst_op, 3) + " (" +
              worst_name + "), model " + fmt(worst_model, 3) + "; " + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 7. Quantization

Outcome quantization() {
  int fixed_ok = 0, fixed_total = 0;
  double worst_ratio = 0;
  for (auto id : {CodebookId::kNf4, CodebookId::kInt4Sym}) {
    const auto& levels = codebook(id);
    for (float scale : {1.0f, 0.37f, 2.5f}) {
      MatrixF w(4, 64);
      for (Index i = 0; i < w.size(); ++i) {
        w.data()[i] = scale * levels[static_cast<std::size_t>(i % usable_codes(id))];
      }
      ++fixed_total;
      const auto q = quantize(w, 64, id);
      const MatrixF back = dequantize(q);
      fixed_ok += same_bits(back, w) && quantize(back, 64, id) == q;
    }
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const MatrixF w = random_matrix<float>(8, 128, seed, -2, 2);
      const auto q = quantize(w, 64, id);
      const MatrixF back = dequantize(q);
      for (Index i = 0; i < w.size(); ++i) {
        const double s = q.scales[static_cast<std::size_t>(i / 64)];
        const double bound = s * max_half_gap(id) * (1 + 1e-6) + 1e-12;
        worst_ratio = std::max(worst_ratio, std::abs(double(back.data()[i]) - w.data()[i]) / bound);
      }
    }
  }

  // Frozen 4-bit base under LoRA training.
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ff = 64;
  c.max_seq = 32;
  auto w = init_model(c);
  randomize(w, 8, 0.2);
  const auto qm = quantize_model(w, 64, CodebookId::kNf4);
  const std::string before = quantized_container(qm).serialize();
  auto adapters = init_adapters(w, 1);
  TrainConfig t;
  t.steps = 20;
  t.seq_len = 16;
  t.batch_size = 4;
  t.micro_batch = 2;
  t.lr = 1e-2;
  const auto corpus = random_tokens(2000, c.vocab, 9);
  train_pruned_lora(qm, adapters, corpus, t);
  const bool codes_identical = quantized_container(qm).serialize() == before;
  bool adapters_moved = false;
  for (const auto& [name, ad] : adapters) adapters_moved |= ad.b.cwiseAbs().maxCoeff() > 0;

  return {fixed_ok == fixed_total && worst_ratio <= 1.0 && codes_identical && adapters_moved,
          std::to_string(fixed_ok) + "/" + std::to_string(fixed_total) + " fixed points exact; max error / half-gap " +
              fmt(worst_ratio, 3) + "; packed codes " + (codes_identical ? "byte-identical" : "CHANGED") +
              " after 20 training steps"};
}

// ---------------------------------------------------------------------------
// 8-10. Ablations through the CLI

using Summary = std::map<std::string, std::string>;

std::optional<Summary> run_cli(const std::vector<std::string>& args, std::string* err_out = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    if (err_out != nullptr) *err_out = err.str();
    return std::nullopt;
  }
  Summary kv;
  std::istringstream line(out.str());
  std::string item;
  while (line >> item) {
    const auto eq = item.find('=');
    if (eq != std::string::npos) kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

/// Pretrains a toy base on the general corpus once, then per seed runs the
/// full pipeline (stru, ratio 0.5, align 300, SFT 400), the same without
/// recovery, without alignment, and plain LoRA on the base.
struct AblationOutcome {
  bool ok = false;
  std::string error;
  Summary summary;
  std::string per_seed;  ///< "label=ppl" pairs from final_ppl.csv
  double pretrain_seconds = 0;
  double seconds = 0;
};

const std::vector<std::string>& ablation_settings() {
  static const std::vector<std::string> s = {
      "--set", "prune.strategy=stru", "--set", "prune.ratio=0.5", "--set", "align.steps=300",
      "--set", "sft.steps=400",       "--set", "pretrain.steps=10000", "--set", "corpus.general_bytes=1000000"};
  return s;
}

const AblationOutcome& ablation() {
  static const AblationOutcome result = [] {
    AblationOutcome r;
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::temp_directory_path() / "loram_acceptance_ablation";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto with = [&](std::vector<std::string> args) {
      std::vector<std::string> full = ablation_settings();
      full.insert(full.end(), args.begin(), args.end());
      return full;
    };
    const std::string d = dir.string();
    const std::vector<std::vector<std::string>> steps = {
        {"corpus", "make-synthetic", "--out-dir", d + "/corpus"},
        {"init", "--out", d + "/base.lmck"},
        {"pretrain", "--model", d + "/base.lmck", "--corpus", d + "/corpus/general.txt", "--out", d + "/base.lmck"},
    };
    for (const auto& s : steps) {
      if (!run_cli(with(s), &r.error)) return r;
    }
    r.pretrain_seconds = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    const auto summary =
        run_cli(with({"ablate", "--base", d + "/base.lmck", "--general", d + "/corpus/general.txt", "--task",
                      d + "/corpus/task.txt", "--test", d + "/corpus/task_test.txt", "--seeds", "1,2,3", "--out-dir",
                      d + "/ablation"}),
                &r.error);
    if (!summary) return r;
    r.summary = *summary;
    r.ok = true;
    r.seconds = seconds_since(t1);
    std::ifstream csv(dir / "ablation" / "final_ppl.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      const auto comma = line.find(',');
      r.per_seed += (r.per_seed.empty() ? "" : " ") + line.substr(0, comma) + "=" + fmt(std::stod(line.substr(comma + 1)));
    }
    fs::remove_all(dir);
    return r;
  }();
  return result;
}

double value(const Summary& s, const std::string& key) { return std::stod(s.at(key)); }

Outcome recovery_ablation() {
  const auto& a = ablation();
  if (!a.ok) return {false, "ablation run failed: " + a.error};
  const double with = value(a.summary, "loram_median"), without = value(a.summary, "norecovery_median");
  return {with < without, "median task ppl with recovery " + fmt(with) + " vs without " + fmt(without) + "; " +
                              fmt(a.seconds, 3) + " s ablation after " +
                              fmt(a.pretrain_seconds, 3) + " s corpus and base pretraining\n      per seed: " +
                              a.per_seed};
}

Outcome alignment_ablation() {
  const auto& a = ablation();
  if (!a.ok) return {false, "ablation run failed: " + a.error};
  const double with = value(a.summary, "loram_median"), without = value(a.summary, "noalign_median");
  return {with < without, "median merged task ppl with alignment " + fmt(with) + " vs without " + fmt(without)};
}

Outcome loram_gain() {
  const auto& a = ablation();
  if (!a.ok) return {false, "ablation run failed: " + a.error};
  const double base = value(a.summary, "base_ppl"), loram = value(a.summary, "loram_median"),
               lora = value(a.summary, "lora_median");
  return {loram < base && lora <= loram,
          "task ppl: untrained base " + fmt(base) + " > LoRAM merged " + fmt(loram) + " >= LoRA " + fmt(lora)};
}

// ---------------------------------------------------------------------------
// 11. Determinism

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "loram_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> settings = {
      "--set", "pretrain.steps=40", "--set", "align.steps=20", "--set", "sft.steps=20",
      "--set", "corpus.general_bytes=60000", "--set", "corpus.task_lines=1000", "--set", "stages.quantize=true"};
  const std::vector<std::string> artifacts = {"base.lmck",    "pruned.lmck",   "plan.lmck",      "aligned.lmck",
                                              "q.lmck",       "adapters.lmck", "recovered.lmck", "merged.lmck",
                                              "corpus/general.txt", "corpus/task.txt"};
  std::string err;
  for (const char* tag : {"a", "b"}) {
    const std::string d = (root / tag).string();
    const std::vector<std::vector<std::string>> steps = {
        {"corpus", "make-synthetic", "--out-dir", d + "/corpus"},
        {"init", "--out", d + "/base.lmck"},
        {"pretrain", "--model", d + "/base.lmck", "--corpus", d + "/corpus/general.txt", "--out", d + "/base.lmck"},
        {"prune", "--model", d + "/base.lmck", "--corpus", d + "/corpus/general.txt", "--out", d + "/pruned.lmck",
         "--plan-out", d + "/plan.lmck"},
        {"align", "--model", d + "/pruned.lmck", "--plan", d + "/plan.lmck", "--corpus", d + "/corpus/general.txt",
         "--out", d + "/aligned.lmck"},
        {"quantize", "--model", d + "/aligned.lmck", "--out", d + "/q.lmck"},
        {"finetune", "--model", d + "/q.lmck", "--plan", d + "/plan.lmck", "--corpus", d + "/corpus/task.txt", "--out",
         d + "/adapters.lmck"},
        {"recover", "--adapters", d + "/adapters.lmck", "--plan", d + "/plan.lmck", "--base", d + "/base.lmck",
         "--out", d + "/recovered.lmck"},
        {"merge", "--base", d + "/base.lmck", "--delta", d + "/recovered.lmck", "--out", d + "/merged.lmck"},
    };
    for (auto s : steps) {
      s.insert(s.begin(), settings.begin(), settings.end());
      if (!run_cli(s, &err)) return {false, "pipeline failed: " + err};
    }
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  int identical = 0;
  std::string differing;
  for (const auto& f : artifacts) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (!a.empty() && a == b) {
      ++identical;
    } else {
      differing += " " + f;
    }
  }
  fs::remove_all(root);
  const int n = static_cast<int>(artifacts.size());
  return {identical == n, std::to_string(identical) + "/" + std::to_string(n) + " artifacts byte-identical" +
                              (differing.empty() ? "" : "; differ:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "accounting fixtures", accounting_fixtures},
      {2, "mask algebra", mask_algebra},
      {3, "compact equals masked full model", compact_equals_masked},
      {4, "merge preservation", merge_preservation},
      {5, "zero-init equivalence", zero_init_equivalence},
      {6, "gradient checks", gradient_checks},
      {7, "quantization", quantization},
      {8, "recovery ablation", recovery_ablation},
      {9, "alignment ablation", alignment_ablation},
      {10, "LoRAM between base and LoRA", loram_gain},
      {11, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && selected.count(c.id) == 0) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
