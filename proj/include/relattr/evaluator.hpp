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

#ifndef RELATTR_EVALUATOR_HPP_
#define RELATTR_EVALUATOR_HPP_

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relattr/corpus.hpp"
#include "relattr/rtsa2.hpp"

namespace relattr::eval {

enum class Group { kSeen, kUnseen };

struct ScoredPair {
  double score = 0.0;  // P("B stronger than A") for the target attribute
  int label = 0;       // 1 = B stronger; label 1 is the positive class
  corpus::Gender gender = corpus::Gender::kMale;
  Group group = Group::kSeen;
  std::size_t attribute = 0;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fraction of pairs where (score >= threshold) == (label == 1). Ties count
// as positive. nullopt marks an empty cell.
std::optional<double> accuracy(std::span<const ScoredPair> pairs, double threshold = 0.5);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Sweeps every distinct score as a threshold (predict positive when
// score >= t, plus one threshold above the maximum), and returns the point
// where FPR and FNR cross, linearly interpolated between adjacent
// thresholds. Throws EvalError unless both labels are present.
EerResult eer(std::span<const ScoredPair> pairs);

struct Cell {
  std::size_t count = 0;
  std::optional<double> acc;
  std::optional<double> eer;
};

struct EvalReport {
  // cells[group][gender], group 0 = seen, gender 0 = M.
  std::array<std::array<Cell, 2>, 2> cells{};
  // Arithmetic mean of the M and F ACC cells of each group.
  std::array<std::optional<double>, 2> avg_acc{};
  std::vector<std::optional<double>> attribute_acc;
  std::vector<std::size_t> attribute_count;
  Cell overall;

  const Cell& cell(Group g, corpus::Gender s) const;
  // True when every gender x group cell has ACC and EER.
  bool complete() const;
};

EvalReport build_report(std::span<const ScoredPair> pairs, std::size_t k);

// Eval-mode scoring of the test_seen and test_unseen examples.
std::vector<ScoredPair> score_split(const corpus::CorpusSplit& split, rtsa2::ModelParams& params,
                                    const rtsa2::ModelConfig& cfg);

EvalReport evaluate(rtsa2::ModelParams& params, const rtsa2::ModelConfig& cfg,
                    const corpus::CorpusSplit& split);

std::string format_report_text(const EvalReport& report, const corpus::AttributeVocab& vocab);
std::string format_report_csv(const EvalReport& report, const corpus::AttributeVocab& vocab);

}  // namespace relattr::eval

#endif  // RELATTR_EVALUATOR_HPP_
