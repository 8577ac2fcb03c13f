// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "loram/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "loram/errors.hpp"

#ifndef LORAM_VERSION_STRING
#define LORAM_VERSION_STRING "loram 0.1.0 (unknown)"
#endif

namespace loram {

std::string_view version_string() { return LORAM_VERSION_STRING; }

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ConfigError("config: invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T v{};
  const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
  if (r.ec != std::errc{} || r.ptr != value.data() + value.size()) bad_value(key, value);
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value);
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Registry = std::map<std::string, Field, std::less<>>;

template <typename Member>
Field numeric(Member member) {
  using T = std::remove_cvref_t<decltype(std::invoke(member, std::declval<RunConfig&>()))>;
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { member(c) = parse_number<T>(k, v); },
          [member](const RunConfig& c) { return format_number(member(c)); }};
}

template <typename Member>
Field boolean(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { member(c) = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); }};
}

std::string targets_to_string(const std::vector<TargetKind>& ts) {
  std::string out;
  for (auto t : ts) {
    if (!out.empty()) out += ',';
    out += to_string(t);
  }
  return out;
}

std::vector<TargetKind> targets_from_string(std::string_view key, std::string_view v) {
  if (v == "llama2" || v == "llama3") return ModelConfig::preset_targets(v);
  std::vector<TargetKind> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto end = std::min(v.find(',', start), v.size());
    const auto item = trim(v.substr(start, end - start));
    try {
      out.push_back(target_kind_from_string(item));
    } catch (const std::exception&) {
      bad_value(key, v);
    }
    start = end + 1;
  }
  return out;
}

void add_train(Registry& r, const std::string& section, TrainConfig RunConfig::*stage) {
  auto at = [stage](auto field) { return [stage, field](auto& c) -> auto& { return c.*stage.*field; }; };
  r[section + ".lr"] = numeric(at(&TrainConfig::lr));
  r[section + ".batch_size"] = numeric(at(&TrainConfig::batch_size));
  r[section + ".micro_batch"] = numeric(at(&TrainConfig::micro_batch));
  r[section + ".seq_len"] = numeric(at(&TrainConfig::seq_len));
  r[section + ".steps"] = numeric(at(&TrainConfig::steps));
  r[section + ".beta1"] = numeric(at(&TrainConfig::beta1));
  r[section + ".beta2"] = numeric(at(&TrainConfig::beta2));
  r[section + ".eps"] = numeric(at(&TrainConfig::eps));
  r[section + ".weight_decay"] = numeric(at(&TrainConfig::weight_decay));
  r[section + ".delta_mask_mode"] = {
      [stage](RunConfig& c, std::string_view k, std::string_view v) {
        if (v == "masked") {
          (c.*stage).delta_mask_mode = DeltaMaskMode::kMasked;
        } else if (v == "dense") {
          (c.*stage).delta_mask_mode = DeltaMaskMode::kDense;
        } else {
          bad_value(k, v);
        }
      },
      [stage](const RunConfig& c) {
        return std::string((c.*stage).delta_mask_mode == DeltaMaskMode::kMasked ? "masked" : "dense");
      }};
}

const Registry& registry() {
  static const Registry r = [] {
    Registry r;
    r["run.seed"] = numeric([](auto& c) -> auto& { return c.seed; });

    r["model.n_layers"] = numeric([](auto& c) -> auto& { return c.model.n_layers; });
    r["model.d_model"] = numeric([](auto& c) -> auto& { return c.model.d_model; });
    r["model.n_heads"] = numeric([](auto& c) -> auto& { return c.model.n_heads; });
    r["model.d_ff"] = numeric([](auto& c) -> auto& { return c.model.d_ff; });
    r["model.vocab"] = numeric([](auto& c) -> auto& { return c.model.vocab; });
    r["model.max_seq"] = numeric([](auto& c) -> auto& { return c.model.max_seq; });
    r["model.lora_rank"] = numeric([](auto& c) -> auto& { return c.model.lora_rank; });
    r["model.lora_alpha"] = numeric([](auto& c) -> auto& { return c.model.lora_alpha; });
    r["model.lora_dropout"] = numeric([](auto& c) -> auto& { return c.model.lora_dropout; });
    r["model.norm_eps"] = numeric([](auto& c) -> auto& { return c.model.norm_eps; });
    r["model.lora_targets"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) { c.model.lora_targets = targets_from_string(k, v); },
        [](const RunConfig& c) { return targets_to_string(c.model.lora_targets); }};
    r["model.position"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                             if (v == "none") {
                               c.model.position = PositionEncoding::kNone;
                             } else if (v == "sinusoidal") {
                               c.model.position = PositionEncoding::kSinusoidal;
                             } else {
                               bad_value(k, v);
                             }
                           },
                           [](const RunConfig& c) {
                             return std::string(c.model.position == PositionEncoding::kNone ? "none" : "sinusoidal");
                           }};

    add_train(r, "pretrain", &RunConfig::pretrain);
    add_train(r, "align", &RunConfig::align);
    add_train(r, "sft", &RunConfig::sft);

    r["prune.strategy"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                             try {
                               c.prune.strategy = strategy_from_string(v);
                             } catch (const std::exception&) {
                               bad_value(k, v);
                             }
                           },
                           [](const RunConfig& c) { return std::string(to_string(c.prune.strategy)); }};
    r["prune.ratio"] = numeric([](auto& c) -> auto& { return c.prune.ratio; });
    r["prune.protect_first"] = numeric([](auto& c) -> auto& { return c.prune.protect.first; });
    r["prune.protect_last"] = numeric([](auto& c) -> auto& { return c.prune.protect.last; });
    r["prune.semi_n"] = numeric([](auto& c) -> auto& { return c.prune.semi_n; });
    r["prune.semi_m"] = numeric([](auto& c) -> auto& { return c.prune.semi_m; });
    r["prune.calibration_windows"] = numeric([](auto& c) -> auto& { return c.prune.calibration_windows; });

    r["quant.block_size"] = numeric([](auto& c) -> auto& { return c.quant.block_size; });
    r["quant.codebook"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                             try {
                               c.quant.codebook = codebook_from_string(v);
                             } catch (const std::exception&) {
                               bad_value(k, v);
                             }
                           },
                           [](const RunConfig& c) { return std::string(to_string(c.quant.codebook)); }};

    r["stages.prune"] = boolean([](auto& c) -> auto& { return c.flags.prune; });
    r["stages.align"] = boolean([](auto& c) -> auto& { return c.flags.align; });
    r["stages.quantize"] = boolean([](auto& c) -> auto& { return c.flags.quantize; });
    r["stages.recover"] = boolean([](auto& c) -> auto& { return c.flags.recover; });

    r["corpus.seed"] = numeric([](auto& c) -> auto& { return c.corpus.seed; });
    r["corpus.general_bytes"] = numeric([](auto& c) -> auto& { return c.corpus.general_bytes; });
    r["corpus.general_test_bytes"] = numeric([](auto& c) -> auto& { return c.corpus.general_test_bytes; });
    r["corpus.task_lines"] = numeric([](auto& c) -> auto& { return c.corpus.task_lines; });
    r["corpus.task_test_lines"] = numeric([](auto& c) -> auto& { return c.corpus.task_test_lines; });

    r["eval.seq_len"] = numeric([](auto& c) -> auto& { return c.eval_seq_len; });
    return r;
  }();
  return r;
}

const Field& field(std::string_view key) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("config: unknown key " + std::string(key));
  return it->second;
}

}  // namespace

RunConfig::RunConfig() {
  pretrain.steps = 1000;
  pretrain.lr = 3e-3;
  align.steps = 300;
  sft.steps = 400;
}

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : registry()) out.push_back(k);
  return out;
}

void RunConfig::resolve() {
  model.seed = seed;
  pretrain.seed = seed;
  align.seed = seed;
  sft.seed = seed;
  model.validate();
  pretrain.validate(model);
  pipeline().validate(model);
  if (eval_seq_len < 1 || eval_seq_len > model.max_seq) throw ConfigError("config: eval.seq_len outside [1, max_seq]");
}

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig p;
  p.flags = flags;
  p.prune = prune;
  p.quant = quant;
  p.align = align;
  p.sft = sft;
  p.adapter_seed = seed;
  return p;
}

std::string RunConfig::to_ini() const {
  std::string out;
  std::string section;
  for (const auto& [key, f] : registry()) {
    const auto dot = key.find('.');
    const auto s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += "[" + s + "]\n";
      section = s;
    }
    out += key.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, f] : registry()) {
    const auto dot = key.find('.');
    j[key.substr(0, dot)][key.substr(dot + 1)] = f.get(*this);
  }
  return j;
}

RunConfig parse_run_config(std::string_view ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    c = parse_run_config(text.str());
  }
  if (const char* env = std::getenv("LORAM_SEED"); env != nullptr && *env != '\0') c.set("run.seed", env);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + o + "' is not key=value");
    c.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
  c.resolve();
  return c;
}

}  // namespace loram
