// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "loram/config.hpp"
#include "loram/container.hpp"
#include "loram/corpus.hpp"
#include "loram/errors.hpp"
#include "loram/eval.hpp"
#include "loram/rng.hpp"

namespace loram::cli {

namespace fs = std::filesystem;

namespace {

/// One summary line: "command=<name> k=v ...".
class Summary {
 public:
  explicit Summary(std::string_view command) { line_ << "command=" << command; }

  template <typename T>
  Summary& add(std::string_view key, const T& value) {
    line_ << ' ' << key << '=' << value;
    return *this;
  }
  Summary& add(std::string_view key, double value) {
    line_ << ' ' << key << '=' << std::setprecision(9) << value;
    return *this;
  }

  void print(std::ostream& out) const { out << line_.str() << '\n'; }

 private:
  std::ostringstream line_;
};

void require_inputs(std::initializer_list<const std::string*> paths) {
  for (const auto* p : paths) {
    if (p->empty()) continue;
    if (!fs::is_regular_file(*p)) throw ArtifactError("missing input: " + *p);
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out) throw ArtifactError("cannot write " + path.string());
}

std::vector<std::int32_t> read_corpus(const std::string& path) {
  const auto tokens = tokenize(read_text(path));
  if (tokens.empty()) throw ArtifactError("empty corpus: " + path);
  return tokens;
}

/// Embeds the resolved configuration and tool version, then writes.
void save(Container c, const std::string& path, const RunConfig& cfg, std::string_view stage) {
  c.metadata["run_config"] = cfg.to_json();
  c.metadata["tool_version"] = std::string(version_string());
  c.metadata["stage"] = std::string(stage);
  c.save(path);
}

/// Plan or masks, whichever the prune step produced.
struct Pruning {
  std::optional<StructuredPlan> plan;
  MaskSet masks;
};

Pruning load_pruning(const std::string& path) {
  Pruning p;
  if (path.empty()) return p;
  const auto c = Container::load(path);
  const auto kind = c.metadata.value("kind", std::string());
  if (kind == "plan") {
    p.plan = load_plan(c);
  } else {
    p.masks = load_masks(c);
  }
  return p;
}

Container pruning_container(const Pruning& p) { return p.plan ? plan_container(*p.plan) : masks_container(p.masks); }

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::string> late;  ///< subcommand flags; applied after --set
};

using Action = std::function<void(const RunConfig&, std::ostream&)>;

// ---------------------------------------------------------------------------
// Commands

void cmd_config(const RunConfig& cfg, std::ostream& out) { out << cfg.to_ini(); }

void cmd_corpus_synthetic(const RunConfig& cfg, const std::string& dir, std::ostream& out) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto& c = cfg.corpus;
  const std::string general = make_general_corpus(c.seed, c.general_bytes);
  const std::string general_test = make_general_corpus(c.seed, c.general_test_bytes, 1);
  const std::string task = make_task_corpus(c.seed, c.task_lines);
  const std::string task_test = make_task_corpus(c.seed, c.task_test_lines, 1);
  write_text(fs::path(dir) / "general.txt", general);
  write_text(fs::path(dir) / "general_test.txt", general_test);
  write_text(fs::path(dir) / "task.txt", task);
  write_text(fs::path(dir) / "task_test.txt", task_test);
  Summary("corpus")
      .add("mode", "synthetic")
      .add("seed", c.seed)
      .add("general_tokens", general.size())
      .add("general_test_tokens", general_test.size())
      .add("task_tokens", task.size())
      .add("task_test_tokens", task_test.size())
      .add("dir", dir)
      .print(out);
}

void cmd_corpus_import(const std::string& in, const std::string& dest, std::ostream& out) {
  require_inputs({&in});
  const std::string text = read_text(in);
  write_text(dest, text);
  Summary("corpus").add("mode", "import").add("tokens", text.size()).add("out", dest).print(out);
}

void cmd_init(const RunConfig& cfg, const std::string& dest, std::ostream& out) {
  const auto w = init_model(cfg.model);
  save(model_container(w), dest, cfg, "init");
  Summary("init").add("params", count_params(w)).add("seed", cfg.seed).add("out", dest).print(out);
}

void cmd_pretrain(const RunConfig& cfg, const std::string& model, const std::string& corpus, const std::string& dest,
                  const std::string& trace, std::ostream& out) {
  require_inputs({&model, &corpus});
  auto w = load_model(Container::load(model));
  const auto tokens = read_corpus(corpus);
  const auto losses = pretrain(w, tokens, cfg.pretrain);
  save(model_container(w), dest, cfg, "pretrain");
  if (!trace.empty()) write_text(trace, loss_csv(losses));
  Summary("pretrain").add("steps", losses.size()).add("final_loss", losses.back()).add("out", dest).print(out);
}

void cmd_prune(const RunConfig& cfg, const std::string& model, const std::string& corpus, const std::string& dest,
               const std::string& plan_out, const std::string& plan_text, std::ostream& out) {
  const bool needs_corpus = cfg.prune.strategy == Strategy::kGradient;
  if (needs_corpus && corpus.empty()) throw ConfigError("prune: strategy stru needs --corpus for calibration");
  require_inputs({&model, &corpus});
  const auto base = load_model(Container::load(model));
  const std::vector<std::int32_t> calibration = needs_corpus ? read_corpus(corpus) : std::vector<std::int32_t>{};
  auto r = prune_model(base, calibration, cfg.prune, cfg.align.seq_len, cfg.seed);
  const Pruning p{r.plan, r.masks};
  const auto& pruned = r.model;
  save(model_container(pruned), dest, cfg, "prune");
  save(pruning_container(p), plan_out, cfg, "prune");
  if (!plan_text.empty() && p.plan) write_text(plan_text, plan_to_text(*p.plan));
  std::int64_t retained = count_params(pruned);
  if (!p.plan) {
    // Masked weights keep their shape; count the surviving entries instead.
    for (const auto& [name, m] : p.masks) retained -= m.size() - m.cast<std::int64_t>().sum();
  }
  Summary("prune")
      .add("strategy", to_string(cfg.prune.strategy))
      .add("ratio", cfg.prune.ratio)
      .add("orig_params", count_params(base))
      .add("pruned_params", retained)
      .add("out", dest)
      .add("plan", plan_out)
      .print(out);
}

void cmd_align(const RunConfig& cfg, const std::string& model, const std::string& plan, const std::string& corpus,
               const std::string& dest, const std::string& trace, std::ostream& out) {
  require_inputs({&model, &plan, &corpus});
  auto w = load_model(Container::load(model));
  const auto p = load_pruning(plan);
  const auto tokens = read_corpus(corpus);
  const auto losses = align_pretrain(w, tokens, cfg.align, p.masks.empty() ? nullptr : &p.masks);
  save(model_container(w), dest, cfg, "align");
  if (!trace.empty()) write_text(trace, loss_csv(losses));
  Summary("align").add("steps", losses.size()).add("final_loss", losses.back()).add("out", dest).print(out);
}

void cmd_quantize(const RunConfig& cfg, const std::string& model, const std::string& dest, std::ostream& out) {
  require_inputs({&model});
  const auto w = load_model(Container::load(model));
  const auto q = quantize_model(w, cfg.quant.block_size, cfg.quant.codebook);
  save(quantized_container(q), dest, cfg, "quantize");
  Summary("quantize")
      .add("codebook", to_string(cfg.quant.codebook))
      .add("block_size", cfg.quant.block_size)
      .add("tensors", q.quantized.size())
      .add("out", dest)
      .print(out);
}

void cmd_finetune(const RunConfig& cfg, const std::string& model, const std::string& plan, const std::string& corpus,
                  const std::string& dest, const std::string& trace, std::ostream& out) {
  require_inputs({&model, &plan, &corpus});
  const auto c = Container::load(model);
  const auto p = load_pruning(plan);
  const auto tokens = read_corpus(corpus);
  const MaskSet* masks = p.masks.empty() ? nullptr : &p.masks;

  const auto dense = load_model(c);
  AdapterSet<float> adapters = init_pruned_adapters(dense, p.plan, cfg.seed);
  const auto losses = is_quantized(c) ? train_pruned_lora(load_quantized(c), adapters, tokens, cfg.sft, masks)
                                      : train_pruned_lora(dense, adapters, tokens, cfg.sft, masks);
  save(adapters_container(adapters, dense.config), dest, cfg, "finetune");
  if (!trace.empty()) write_text(trace, loss_csv(losses));
  Summary("finetune")
      .add("steps", losses.size())
      .add("final_loss", losses.back())
      .add("quantized", is_quantized(c) ? 1 : 0)
      .add("out", dest)
      .print(out);
}

void cmd_recover(const RunConfig& cfg, const std::string& adapters, const std::string& plan, const std::string& base,
                 const std::string& dest, std::ostream& out) {
  require_inputs({&adapters, &plan, &base});
  const auto ad = load_adapters(Container::load(adapters));
  const auto p = load_pruning(plan);
  const auto w = load_model(Container::load(base));
  const auto rec = p.plan ? recover(ad, *p.plan, w.config) : recover(ad, p.masks, cfg.sft.delta_mask_mode);
  save(recovered_container(rec, w.config), dest, cfg, "recover");
  Summary("recover")
      .add("targets", rec.factors.size())
      .add("structured", p.plan ? 1 : 0)
      .add("out", dest)
      .print(out);
}

void cmd_merge(const RunConfig& cfg, const std::string& base, const std::string& delta, const std::string& adapters,
               const std::string& dest, std::ostream& out) {
  if (delta.empty() == adapters.empty()) throw ConfigError("merge: give exactly one of --delta or --adapters");
  require_inputs({&base, &delta, &adapters});
  const auto base_c = Container::load(base);
  const auto w = load_model(base_c);
  const auto merged = delta.empty() ? merge(w, load_adapters(Container::load(adapters)))
                                    : merge(w, load_recovered(Container::load(delta)));
  auto merged_c = model_container(merged);
  save(merged_c, dest, cfg, "merge");
  Summary("merge")
      .add("base_hash", payload_hash(model_container(w)))
      .add("merged_hash", payload_hash(merged_c))
      .add("out", dest)
      .print(out);
}

void cmd_eval(const RunConfig& cfg, const std::string& model, const std::string& adapters, const std::string& plan,
              const std::string& corpus, std::ostream& out) {
  require_inputs({&model, &adapters, &plan, &corpus});
  InferenceModel m;
  m.weights = load_model(Container::load(model));
  if (!adapters.empty()) m.adapters = load_adapters(Container::load(adapters));
  m.masks = load_pruning(plan).masks;
  m.mask_mode = cfg.sft.delta_mask_mode;
  const auto tokens = read_corpus(corpus);
  const double ppl = perplexity(m, tokens, cfg.eval_seq_len);
  Summary("eval").add("ppl", ppl).add("tokens", tokens.size()).add("seq_len", cfg.eval_seq_len).print(out);
}

void cmd_norms(const std::string& delta, const std::string& dest, std::ostream& out) {
  require_inputs({&delta});
  const auto c = Container::load(delta);
  const auto cfg = c.metadata.at("model_config").get<ModelConfig>();
  const auto rows = norm_table(load_recovered(c), cfg);
  write_text(dest, norm_csv(rows));
  Summary("norms").add("rows", rows.size()).add("out", dest).print(out);
}

void cmd_account(const std::string& orig, const std::string& pruned, const std::string& plan, int bits,
                 std::int64_t orig_params, std::int64_t pruned_params, std::ostream& out) {
  if (!orig.empty()) {
    require_inputs({&orig});
    orig_params = count_params(load_model(Container::load(orig)));
  }
  if (!pruned.empty()) {
    require_inputs({&pruned, &plan});
    const auto c = Container::load(pruned);
    pruned_params = count_params(load_model(c));
    const auto p = load_pruning(plan);
    for (const auto& [name, m] : p.masks) pruned_params -= m.size() - m.cast<std::int64_t>().sum();
    if (bits == 0) bits = is_quantized(c) ? 4 : 16;
  }
  if (bits == 0) bits = 16;
  if (orig_params <= 0 || pruned_params <= 0) throw ConfigError("account: need positive original and pruned counts");
  const auto row = accounting(orig_params, pruned_params, bits);
  Summary("account")
      .add("orig_params", row.orig_params)
      .add("pruned_params", row.pruned_params)
      .add("bits", row.bits_per_param)
      .add("effective_params", row.effective_params)
      .add("reduction", row.reduction_str())
      .add("hbm_gib", row.hbm_str())
      .print(out);
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::stringstream s(list);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("ablate: bad seed list '" + list + "'");
    }
  }
  if (out.empty()) throw ConfigError("ablate: empty seed list");
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per seed: full pipeline (merged, and its pruned model without recovery),
/// the pipeline without alignment, and plain LoRA on the base.
void cmd_ablate(const RunConfig& cfg, const std::string& base, const std::string& general, const std::string& task,
                const std::string& test, const std::string& seeds, const std::string& dir, std::ostream& out) {
  require_inputs({&base, &general, &task, &test});
  const auto w = load_model(Container::load(base));
  const auto general_tokens = read_corpus(general);
  const auto task_tokens = read_corpus(task);
  const auto test_tokens = read_corpus(test);
  const auto seed_list = parse_seeds(seeds);

  std::vector<AblationRun> runs;
  auto record = [&](const std::string& label, double ppl) {
    runs.push_back({label, {cfg.sft.steps}, {ppl}});
    return ppl;
  };
  std::vector<double> with_rec, without_rec, without_align, lora;
  const double base_ppl = perplexity(w, test_tokens, cfg.eval_seq_len);
  for (const auto seed : seed_list) {
    RunConfig c = cfg;
    c.seed = seed;
    c.resolve();
    PipelineConfig p = c.pipeline();
    p.flags = {true, true, false, true};
    auto r = run_pipeline(w, general_tokens, task_tokens, p);
    const std::string s = std::to_string(seed);
    with_rec.push_back(record("loram_s" + s, perplexity(r.inference(), test_tokens, c.eval_seq_len)));
    r.merged.reset();
    without_rec.push_back(record("norecovery_s" + s, perplexity(r.inference(), test_tokens, c.eval_seq_len)));

    p.flags.align = false;
    without_align.push_back(
        record("noalign_s" + s, perplexity(run_pipeline(w, general_tokens, task_tokens, p).inference(), test_tokens,
                                           c.eval_seq_len)));
    p.flags = {false, false, false, false};
    lora.push_back(record("lora_s" + s, perplexity(run_pipeline(w, general_tokens, task_tokens, p).inference(),
                                                   test_tokens, c.eval_seq_len)));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  write_text(fs::path(dir) / "final_ppl.csv", final_ppl_csv(runs));
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto seed : seed_list) {
    const std::string s = std::to_string(seed);
    pairs.emplace_back("loram_s" + s, "norecovery_s" + s);
    pairs.emplace_back("loram_s" + s, "noalign_s" + s);
  }
  write_text(fs::path(dir) / "ablation.csv", ablation_report(runs, pairs).to_csv());
  Summary("ablate")
      .add("seeds", seeds)
      .add("base_ppl", base_ppl)
      .add("loram_median", median(with_rec))
      .add("norecovery_median", median(without_rec))
      .add("noalign_median", median(without_align))
      .add("lora_median", median(lora))
      .add("dir", dir)
      .print(out);
}

int exit_code_for(const std::exception_ptr& e, std::ostream& err) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& x) {
    err << "error: " << x.what() << '\n';
    return kExitConfig;
  } catch (const ArtifactError& x) {
    err << "error: " << x.what() << '\n';
    return kExitArtifact;
  } catch (const ShapeError& x) {
    err << "error: " << x.what() << '\n';
    return kExitShape;
  } catch (const NumericalError& x) {
    err << "error: " << x.what() << '\n';
    return kExitNumerical;
  } catch (const nlohmann::json::exception& x) {
    err << "error: malformed container metadata: " << x.what() << '\n';
    return kExitArtifact;
  } catch (const std::exception& x) {
    err << "error: " << x.what() << '\n';
    return 1;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LoRA training on pruned models, recovered and merged into the full model", "loram"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version_string()));
  Options opt;
  app.add_option("--config", opt.config, "Run configuration file (sections of key = value)");
  app.add_option("--set", opt.overrides, "Override one setting: section.key=value")->take_all();
  app.add_option_function<std::string>("--seed", [&](const std::string& v) { opt.late.push_back("run.seed=" + v); },
                                       "Run seed (overrides LORAM_SEED and the config file)");

  Action action;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&opt, key](const std::string& v) { opt.late.push_back(key + "=" + v); },
                                          help);
  };
  std::string model, corpus, dest, trace, plan, plan_text, adapters, base, delta, orig, pruned, general, task, test;
  std::string seeds = "1,2,3", dir;
  int bits = 0;
  std::int64_t orig_params = 0, pruned_params = 0;

  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  config->callback([&] { action = [](const RunConfig& c, std::ostream& o) { cmd_config(c, o); }; });

  auto* corpus_cmd = app.add_subcommand("corpus", "Generate or import corpora");
  corpus_cmd->require_subcommand(1);
  auto* synth = corpus_cmd->add_subcommand("make-synthetic", "Write general/task train and test corpora");
  synth->add_option("--out-dir", dir, "Output directory")->required();
  flag(synth, "--corpus-seed", "corpus.seed", "Corpus generator seed");
  synth->callback([&] { action = [&](const RunConfig& c, std::ostream& o) { cmd_corpus_synthetic(c, dir, o); }; });
  auto* import = corpus_cmd->add_subcommand("import", "Copy a UTF-8 text file in as a corpus");
  import->add_option("--in", corpus, "Source file")->required();
  import->add_option("--out", dest, "Destination")->required();
  import->callback([&] { action = [&](const RunConfig&, std::ostream& o) { cmd_corpus_import(corpus, dest, o); }; });

  auto* init = app.add_subcommand("init", "Initialize a base model");
  init->add_option("--out", dest)->required();
  init->callback([&] { action = [&](const RunConfig& c, std::ostream& o) { cmd_init(c, dest, o); }; });

  auto* pre = app.add_subcommand("pretrain", "Train every weight of a model on a corpus");
  pre->add_option("--model", model)->required();
  pre->add_option("--corpus", corpus)->required();
  pre->add_option("--out", dest)->required();
  pre->add_option("--trace", trace, "Loss CSV");
  flag(pre, "--steps", "pretrain.steps", "Training steps");
  pre->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_pretrain(c, model, corpus, dest, trace, o); };
  });

  auto* prune = app.add_subcommand("prune", "Prune a model; writes the pruned model and its plan or masks");
  prune->add_option("--model", model)->required();
  prune->add_option("--corpus", corpus, "Calibration corpus (stru)");
  prune->add_option("--out", dest)->required();
  prune->add_option("--plan-out", plan)->required();
  prune->add_option("--plan-text", plan_text, "Retained indices as text (structured only)");
  flag(prune, "--strategy", "prune.strategy", "rand | stru | semi | unst");
  flag(prune, "--ratio", "prune.ratio", "Pruning ratio");
  prune->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_prune(c, model, corpus, dest, plan, plan_text, o); };
  });

  auto* align = app.add_subcommand("align", "Continue pretraining the pruned model");
  align->add_option("--model", model)->required();
  align->add_option("--plan", plan, "Masks to hold at zero (semi/unst)");
  align->add_option("--corpus", corpus)->required();
  align->add_option("--out", dest)->required();
  align->add_option("--trace", trace, "Loss CSV");
  flag(align, "--steps", "align.steps", "Training steps");
  align->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_align(c, model, plan, corpus, dest, trace, o); };
  });

  auto* quant = app.add_subcommand("quantize", "Quantize projection weights to 4 bits");
  quant->add_option("--model", model)->required();
  quant->add_option("--out", dest)->required();
  flag(quant, "--codebook", "quant.codebook", "nf4 | int4sym");
  quant->callback([&] { action = [&](const RunConfig& c, std::ostream& o) { cmd_quantize(c, model, dest, o); }; });

  auto* ft = app.add_subcommand("finetune", "Train LoRA adapters over a frozen (pruned) model");
  ft->add_option("--model", model)->required();
  ft->add_option("--plan", plan, "Plan or masks from prune");
  ft->add_option("--corpus", corpus)->required();
  ft->add_option("--out", dest)->required();
  ft->add_option("--trace", trace, "Loss CSV");
  flag(ft, "--steps", "sft.steps", "Training steps");
  ft->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_finetune(c, model, plan, corpus, dest, trace, o); };
  });

  auto* rec = app.add_subcommand("recover", "Recover pruned adapters to full shape");
  rec->add_option("--adapters", adapters)->required();
  rec->add_option("--plan", plan)->required();
  rec->add_option("--base", base, "Original model (for its configuration)")->required();
  rec->add_option("--out", dest)->required();
  rec->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_recover(c, adapters, plan, base, dest, o); };
  });

  auto* mrg = app.add_subcommand("merge", "Merge a recovered delta or full-shape adapters into a model");
  mrg->add_option("--base", base)->required();
  mrg->add_option("--delta", delta, "Recovered delta");
  mrg->add_option("--adapters", adapters, "Full-shape adapters (plain LoRA)");
  mrg->add_option("--out", dest)->required();
  mrg->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_merge(c, base, delta, adapters, dest, o); };
  });

  auto* ev = app.add_subcommand("eval", "Perplexity on a corpus");
  ev->add_option("--model", model)->required();
  ev->add_option("--adapters", adapters, "Unmerged adapters");
  ev->add_option("--plan", plan, "Masks for unmerged adapters (semi/unst)");
  ev->add_option("--corpus", corpus)->required();
  ev->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_eval(c, model, adapters, plan, corpus, o); };
  });

  auto* norms = app.add_subcommand("norms", "Head-wise and layer-wise norms of a recovered delta");
  norms->add_option("--delta", delta)->required();
  norms->add_option("--out", dest)->required();
  norms->callback([&] { action = [&](const RunConfig&, std::ostream& o) { cmd_norms(delta, dest, o); }; });

  auto* acc = app.add_subcommand("account", "Parameter reduction and weight memory");
  acc->add_option("--orig", orig, "Original model");
  acc->add_option("--pruned", pruned, "Pruned model");
  acc->add_option("--plan", plan, "Masks of a non-structured pruned model");
  acc->add_option("--orig-params", orig_params);
  acc->add_option("--pruned-params", pruned_params);
  acc->add_option("--bits", bits, "Bits per pruned parameter (default 16, 4 for quantized)");
  acc->callback([&] {
    action = [&](const RunConfig&, std::ostream& o) {
      cmd_account(orig, pruned, plan, bits, orig_params, pruned_params, o);
    };
  });

  auto* abl = app.add_subcommand("ablate", "Recovery and alignment ablations across seeds");
  abl->add_option("--base", base)->required();
  abl->add_option("--general", general)->required();
  abl->add_option("--task", task)->required();
  abl->add_option("--test", test)->required();
  abl->add_option("--seeds", seeds, "Comma-separated seeds");
  abl->add_option("--out-dir", dir)->required();
  abl->callback([&] {
    action = [&](const RunConfig& c, std::ostream& o) { cmd_ablate(c, base, general, task, test, seeds, dir, o); };
  });

  std::vector<std::string> argv_store{"loram"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    auto overrides = opt.overrides;
    overrides.insert(overrides.end(), opt.late.begin(), opt.late.end());
    const RunConfig cfg = load_run_config(opt.config, overrides);
    action(cfg, out);
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
}

}  // namespace loram::cli
