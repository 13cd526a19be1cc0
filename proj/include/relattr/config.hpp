// Copyright 2026 The relattr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef RELATTR_CONFIG_HPP_
#define RELATTR_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "relattr/corpus.hpp"
#include "relattr/graph_augment.hpp"
#include "relattr/rtsa2.hpp"
#include "relattr/trainer.hpp"

// Flat key=value run configuration. Keys are prefixed by section
// (`synth.`, `corpus.`, `mining.`, `model.`, `train.`, `ablation.`) except
// the top-level `seed`.
namespace relattr::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  corpus::SynthConfig synth;
  corpus::ExpandConfig expand;
  graph::MiningConfig mining;
  rtsa2::ModelConfig model;
  trainer::TrainConfig train;
  trainer::Ablations ablations;
  // Write measured epoch times to the history file; off gives
  // reproducible bytes.
  bool log_time = true;

  // Keys assigned explicitly by a file or override.
  std::set<std::string> explicit_keys;

  // Throws ConfigError for unknown keys and unparsable values.
  void set(std::string_view key, std::string_view value);
  bool is_explicit(std::string_view key) const;
  // `key=value` lines, one per key, in a fixed order.
  std::string dump() const;
  // Propagates `seed` into the per-module seeds.
  void resolve_seeds();
};

// Reads `key = value` lines; '#' starts a comment. Errors carry file:line.
void load_file(RunConfig& cfg, const std::filesystem::path& path);
// Applies one `key=value` override.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace relattr::config

#endif  // RELATTR_CONFIG_HPP_
