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

#ifndef RELATTR_CORPUS_HPP_
#define RELATTR_CORPUS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace relattr::corpus {

inline constexpr std::size_t kDefaultAttributeCount = 34;
inline constexpr std::size_t kDefaultEmbeddingDim = 256;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; the message carries "<file>:<line>".
class ParseError : public CorpusError {
 public:
  using CorpusError::CorpusError;
};

class VocabError : public CorpusError {
 public:
  using CorpusError::CorpusError;
};

enum class Gender { kMale, kFemale };
enum class Origin { kAnnotated, kMined };

std::string_view to_string(Gender g);
std::string_view to_string(Origin o);
Gender parse_gender(std::string_view s);
Origin parse_origin(std::string_view s);

// Ordered, duplicate-free list of attribute descriptors.
class AttributeVocab {
 public:
  AttributeVocab() = default;
  explicit AttributeVocab(std::vector<std::string> names);

  // attr00, attr01, ... (zero padded to two digits).
  static AttributeVocab numbered(std::size_t k = kDefaultAttributeCount);
  // One descriptor per line; blank lines and '#' comments ignored.
  static AttributeVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> find(std::string_view name) const;
  // Throws VocabError for unknown names.
  std::size_t index_of(std::string_view name) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EmbeddingVector {
  Eigen::VectorXd values;
  std::string utterance_id;
  std::string speaker_id;
  Gender gender = Gender::kMale;
};

using EmbeddingPtr = std::shared_ptr<const EmbeddingVector>;

// Immutable-after-load collection of utterance embeddings of one dimension.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim = kDefaultEmbeddingDim);

  // Rejects wrong length, non-finite values, duplicate utterance ids, and a
  // speaker appearing with two genders.
  void add(EmbeddingVector v);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return by_utterance_.size(); }
  bool contains(const std::string& utterance_id) const;
  EmbeddingPtr at(const std::string& utterance_id) const;
  // Sorted utterance ids of `speaker`; empty when unknown.
  const std::vector<std::string>& utterances_of(const std::string& speaker) const;
  std::optional<Gender> gender_of(const std::string& speaker) const;
  std::vector<std::string> speakers() const;

  const std::map<std::string, EmbeddingPtr>& entries() const { return by_utterance_; }

 private:
  std::size_t dim_;
  std::map<std::string, EmbeddingPtr> by_utterance_;
  std::map<std::string, std::vector<std::string>> by_speaker_;
  std::map<std::string, Gender> gender_;
};

// Manifest: '#'-prefixed `blob=<file>` and `dim=<d>` declarations, then a
// TSV header `utterance_id speaker_id gender offset dim` and one row per
// utterance. The blob holds 32-bit little-endian floats; `offset` is a byte
// offset. The blob path is resolved relative to the manifest.
EmbeddingStore load_embedding_store(const std::filesystem::path& manifest);
void write_embedding_store(const EmbeddingStore& store,
                           const std::filesystem::path& manifest,
                           const std::string& blob_name = "embeddings.bin");

struct ComparisonRecord {
  std::string weaker;
  std::string stronger;
  std::size_t attribute = 0;
  Origin origin = Origin::kAnnotated;
  double confidence = 1.0;

  friend bool operator==(const ComparisonRecord&, const ComparisonRecord&) = default;
};

// `weaker,stronger,Attr1[|Attr2[|Attr3]]`, optionally followed by
// `,origin,confidence` (the augmented-records format).
std::vector<ComparisonRecord> parse_annotations(const std::filesystem::path& path,
                                                const AttributeVocab& vocab);
std::vector<ComparisonRecord> parse_annotations(std::istream& in,
                                                const AttributeVocab& vocab,
                                                const std::string& source);
void write_annotations(const std::vector<ComparisonRecord>& records,
                       const AttributeVocab& vocab,
                       const std::filesystem::path& path, bool with_origin);

// label == 1 means emb_b is stronger than emb_a on `attribute`.
struct TrainingExample {
  EmbeddingPtr emb_a;
  EmbeddingPtr emb_b;
  std::size_t attribute = 0;
  int label = 1;
  Origin origin = Origin::kAnnotated;
};

struct SpeakerSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test_seen;
  std::vector<std::string> test_unseen;
};

// Text file with `[train]`, `[validation]`, `[test_seen]`, `[test_unseen]`
// sections, one speaker id per line.
SpeakerSplit load_split(const std::filesystem::path& path);
void save_split(const SpeakerSplit& split, const std::filesystem::path& path);

struct RecordSplit {
  std::vector<ComparisonRecord> train;
  std::vector<ComparisonRecord> validation;
  std::vector<ComparisonRecord> test_seen;
  std::vector<ComparisonRecord> test_unseen;
};

struct CorpusSplit {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
  std::vector<TrainingExample> test_seen;
  std::vector<TrainingExample> test_unseen;
  SpeakerSplit speakers;
};

struct ExpandConfig {
  std::size_t per_pair = 4;
  bool swap_augment = true;
};

// For every record, samples min(per_pair, |utts(weaker)| * |utts(stronger)|)
// distinct utterance combinations (label 1); with swap_augment each one is
// also emitted reversed with label 0.
std::vector<TrainingExample> expand_to_utterance_pairs(
    const std::vector<ComparisonRecord>& records, const EmbeddingStore& store,
    std::size_t per_pair, bool swap_augment, std::uint64_t seed);

CorpusSplit make_corpus_split(const RecordSplit& records,
                              const SpeakerSplit& speakers,
                              const EmbeddingStore& store,
                              const ExpandConfig& cfg, std::uint64_t seed);

// Throws CorpusError when an unseen-test speaker also trains.
void check_split(const SpeakerSplit& split);

struct SynthConfig {
  std::size_t n_speakers = 12;
  std::size_t utt_per_speaker = 3;
  std::size_t d = 64;
  std::size_t k = 4;
  double margin = 0.1;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double unseen_fraction = 0.25;
  // Fraction of seen-speaker records held out for validation, and again
  // for test_seen.
  double holdout_fraction = 0.15;
  // The last `tail_attributes` attributes keep each eligible record between
  // two seen speakers with probability `tail_keep` (long-tail corpora).
  std::size_t tail_attributes = 0;
  double tail_keep = 1.0;
};

struct SynthCorpus {
  AttributeVocab vocab;
  EmbeddingStore store;
  std::vector<ComparisonRecord> records;
  RecordSplit split;
  SpeakerSplit speakers;
  // Latent strength per speaker (row, in `speaker_ids` order) and attribute.
  Eigen::MatrixXd latent;
  std::vector<std::string> speaker_ids;
};

// Desk-scale stand-in for a real annotated corpus: latent strengths drawn
// U[0,1), embeddings a fixed random linear map of the latent vector plus
// isotropic Gaussian noise, and a record (a, b, attr) emitted only when
// s(b, attr) - s(a, attr) > margin. Deterministic given the seed.
SynthCorpus synth_corpus(const SynthConfig& cfg);

}  // namespace relattr::corpus

#endif  // RELATTR_CORPUS_HPP_
