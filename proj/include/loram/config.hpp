// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a sectioned key = value file, overridden by LORAM_SEED
// and then by command-line "section.key=value" settings. Every field has a
// default, and the resolved configuration is embedded in every artifact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "loram/loram.hpp"

namespace loram {

/// "loram <version> (<git describe>)".
std::string_view version_string();

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t general_bytes = 300000;
  std::size_t general_test_bytes = 20000;
  std::size_t task_lines = 6000;
  std::size_t task_test_lines = 400;
};

struct RunConfig {
  /// Drives model init, sampling, adapter init and random plans.
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig align;
  TrainConfig sft;
  PruneConfig prune;
  QuantConfig quant;
  StageFlags flags;
  CorpusConfig corpus;
  int eval_seq_len = 64;

  RunConfig();

  /// Sets one "section.key" field from text; ConfigError on unknown keys or
  /// unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string> keys();

  /// Copies `seed` into every per-stage seed and validates.
  void resolve();

  PipelineConfig pipeline() const;
  std::string to_ini() const;
  nlohmann::json to_json() const;
};

RunConfig parse_run_config(std::string_view ini_text);

/// Defaults, then `path` (if non-empty), then LORAM_SEED, then `overrides`
/// ("section.key=value" each); resolved.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace loram
