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

#include "relattr/corpus.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "relattr/text.hpp"

namespace relattr::corpus {

namespace fs = std::filesystem;

std::string_view to_string(Gender g) { return g == Gender::kMale ? "M" : "F"; }

std::string_view to_string(Origin o) {
  return o == Origin::kAnnotated ? "annotated" : "mined";
}

Gender parse_gender(std::string_view s) {
  if (s == "M" || s == "m") return Gender::kMale;
  if (s == "F" || s == "f") return Gender::kFemale;
  throw CorpusError("unknown gender '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
  if (s == "annotated") return Origin::kAnnotated;
  if (s == "mined") return Origin::kMined;
  throw CorpusError("unknown origin '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// AttributeVocab

AttributeVocab::AttributeVocab(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw VocabError("empty attribute name");
    if (!index_.emplace(names_[i], i).second) {
      throw VocabError("duplicate attribute name '" + names_[i] + "'");
    }
  }
}

AttributeVocab AttributeVocab::numbered(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    std::ostringstream os;
    os << "attr" << std::setw(2) << std::setfill('0') << i;
    names.push_back(os.str());
  }
  return AttributeVocab(std::move(names));
}

AttributeVocab AttributeVocab::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open vocabulary file " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    names.emplace_back(s);
  }
  return AttributeVocab(std::move(names));
}

void AttributeVocab::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& n : names_) out << n << '\n';
}

std::optional<std::size_t> AttributeVocab::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t AttributeVocab::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw VocabError("unknown attribute '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// EmbeddingStore

EmbeddingStore::EmbeddingStore(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw CorpusError("embedding dimension must be positive");
}

void EmbeddingStore::add(EmbeddingVector v) {
  if (static_cast<std::size_t>(v.values.size()) != dim_) {
    throw CorpusError("utterance '" + v.utterance_id + "': length " +
                      std::to_string(v.values.size()) + " != dim " + std::to_string(dim_));
  }
  if (!v.values.allFinite()) {
    throw CorpusError("utterance '" + v.utterance_id + "': non-finite value");
  }
  if (v.utterance_id.empty() || v.speaker_id.empty()) {
    throw CorpusError("empty utterance or speaker id");
  }
  if (by_utterance_.count(v.utterance_id) != 0) {
    throw CorpusError("duplicate utterance_id '" + v.utterance_id + "'");
  }
  auto [git, fresh] = gender_.emplace(v.speaker_id, v.gender);
  if (!fresh && git->second != v.gender) {
    throw CorpusError("speaker '" + v.speaker_id + "' listed with two genders");
  }
  auto& utts = by_speaker_[v.speaker_id];
  utts.insert(std::lower_bound(utts.begin(), utts.end(), v.utterance_id), v.utterance_id);
  std::string key = v.utterance_id;
  by_utterance_.emplace(std::move(key), std::make_shared<const EmbeddingVector>(std::move(v)));
}

bool EmbeddingStore::contains(const std::string& utterance_id) const {
  return by_utterance_.count(utterance_id) != 0;
}

EmbeddingPtr EmbeddingStore::at(const std::string& utterance_id) const {
  auto it = by_utterance_.find(utterance_id);
  if (it == by_utterance_.end()) {
    throw CorpusError("unknown utterance '" + utterance_id + "'");
  }
  return it->second;
}

const std::vector<std::string>& EmbeddingStore::utterances_of(const std::string& speaker) const {
  static const std::vector<std::string> kEmpty;
  auto it = by_speaker_.find(speaker);
  return it == by_speaker_.end() ? kEmpty : it->second;
}

std::optional<Gender> EmbeddingStore::gender_of(const std::string& speaker) const {
  auto it = gender_.find(speaker);
  if (it == gender_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> EmbeddingStore::speakers() const {
  std::vector<std::string> out;
  out.reserve(by_speaker_.size());
  for (const auto& [spk, _] : by_speaker_) out.push_back(spk);
  return out;
}

namespace {

void put_f32le(std::string& buf, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

}  // namespace

EmbeddingStore load_embedding_store(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw CorpusError("cannot open manifest " + manifest.string());

  std::string blob_name;
  std::optional<std::size_t> dim;
  struct Row {
    std::string utt, spk;
    Gender gender;
    std::uint64_t offset;
    std::size_t dim;
    std::size_t line;
  };
  std::vector<Row> rows;
  bool header_seen = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = text::trim(line);
    if (s.empty()) continue;
    if (s.front() == '#') {
      auto kv = text::trim(s.substr(1));
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      auto key = text::trim(kv.substr(0, eq));
      auto value = text::trim(kv.substr(eq + 1));
      if (key == "blob") {
        blob_name = std::string(value);
      } else if (key == "dim") {
        dim = text::parse_size(value, where(manifest, lineno));
      }
      continue;
    }
    auto fields = text::split(s, '\t');
    if (!header_seen) {
      if (fields.size() != 5 || fields[0] != "utterance_id" || fields[1] != "speaker_id" ||
          fields[2] != "gender" || fields[3] != "offset" || fields[4] != "dim") {
        throw ParseError(where(manifest, lineno) + ": expected TSV header "
                         "'utterance_id speaker_id gender offset dim'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 5) {
      throw ParseError(where(manifest, lineno) + ": expected 5 tab-separated fields");
    }
    Row r;
    r.utt = std::string(fields[0]);
    r.spk = std::string(fields[1]);
    try {
      r.gender = parse_gender(fields[2]);
    } catch (const CorpusError& e) {
      throw ParseError(where(manifest, lineno) + ": " + e.what());
    }
    r.offset = text::parse_size(fields[3], where(manifest, lineno));
    r.dim = text::parse_size(fields[4], where(manifest, lineno));
    r.line = lineno;
    rows.push_back(std::move(r));
  }
  if (blob_name.empty()) throw ParseError(manifest.string() + ": missing '# blob=' declaration");
  if (!dim || *dim == 0) throw ParseError(manifest.string() + ": missing '# dim=' declaration");
  if (!header_seen) throw ParseError(manifest.string() + ": missing TSV header");

  const fs::path blob_path = manifest.parent_path() / blob_name;
  std::ifstream blob_in(blob_path, std::ios::binary);
  if (!blob_in) throw CorpusError("cannot open embedding blob " + blob_path.string());
  std::string blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  EmbeddingStore store(*dim);
  for (const Row& r : rows) {
    if (r.dim != *dim) {
      throw CorpusError(where(manifest, r.line) + ": length mismatch, row dim " +
                        std::to_string(r.dim) + " != declared dim " + std::to_string(*dim));
    }
    const std::uint64_t need = r.offset + 4ull * r.dim;
    if (need > blob.size()) {
      throw CorpusError(where(manifest, r.line) + ": length mismatch, blob " + blob_name +
                        " has " + std::to_string(blob.size()) + " bytes, row needs " +
                        std::to_string(need));
    }
    EmbeddingVector v;
    v.utterance_id = r.utt;
    v.speaker_id = r.spk;
    v.gender = r.gender;
    v.values.resize(static_cast<Eigen::Index>(r.dim));
    for (std::size_t i = 0; i < r.dim; ++i) {
      v.values(static_cast<Eigen::Index>(i)) = get_f32le(bytes + r.offset + 4 * i);
    }
    try {
      store.add(std::move(v));
    } catch (const CorpusError& e) {
      throw CorpusError(where(manifest, r.line) + ": " + e.what());
    }
  }
  return store;
}

void write_embedding_store(const EmbeddingStore& store, const fs::path& manifest,
                           const std::string& blob_name) {
  std::string blob;
  std::ostringstream rows;
  std::uint64_t offset = 0;
  for (const auto& [utt, v] : store.entries()) {
    rows << utt << '\t' << v->speaker_id << '\t' << to_string(v->gender) << '\t' << offset
         << '\t' << store.dim() << '\n';
    for (Eigen::Index i = 0; i < v->values.size(); ++i) {
      put_f32le(blob, static_cast<float>(v->values(i)));
    }
    offset += 4ull * store.dim();
  }
  std::ofstream out(manifest);
  if (!out) throw CorpusError("cannot write " + manifest.string());
  out << "# blob=" << blob_name << '\n'
      << "# dim=" << store.dim() << '\n'
      << "utterance_id\tspeaker_id\tgender\toffset\tdim\n"
      << rows.str();
  std::ofstream bout(manifest.parent_path() / blob_name, std::ios::binary);
  if (!bout) throw CorpusError("cannot write blob " + blob_name);
  bout.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

// ---------------------------------------------------------------------------
// Annotation files

std::vector<ComparisonRecord> parse_annotations(std::istream& in, const AttributeVocab& vocab,
                                                const std::string& source) {
  std::vector<ComparisonRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const std::string at = source + ":" + std::to_string(lineno);
    auto fields = text::split(s, ',');
    if (fields.size() != 3 && fields.size() != 5) {
      throw ParseError(at + ": expected 'weaker,stronger,Attr[|Attr...]' "
                       "optionally followed by ',origin,confidence'");
    }
    for (auto& f : fields) f = text::trim(f);
    if (fields[0].empty() || fields[1].empty()) throw ParseError(at + ": empty speaker id");
    if (fields[0] == fields[1]) throw ParseError(at + ": weaker and stronger are identical");
    Origin origin = Origin::kAnnotated;
    double confidence = 1.0;
    if (fields.size() == 5) {
      try {
        origin = parse_origin(fields[3]);
      } catch (const CorpusError& e) {
        throw ParseError(at + ": " + e.what());
      }
      confidence = text::parse_double(fields[4], at);
      if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw ParseError(at + ": confidence must be in [0,1]");
      }
    }
    auto attrs = text::split(fields[2], '|');
    for (auto a : attrs) {
      a = text::trim(a);
      if (a.empty()) throw ParseError(at + ": empty attribute");
      auto idx = vocab.find(a);
      if (!idx) throw VocabError(at + ": unknown attribute '" + std::string(a) + "'");
      out.push_back(ComparisonRecord{std::string(fields[0]), std::string(fields[1]), *idx,
                                     origin, confidence});
    }
  }
  return out;
}

std::vector<ComparisonRecord> parse_annotations(const fs::path& path,
                                                const AttributeVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open annotation file " + path.string());
  return parse_annotations(in, vocab, path.string());
}

void write_annotations(const std::vector<ComparisonRecord>& records,
                       const AttributeVocab& vocab, const fs::path& path, bool with_origin) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  if (with_origin) out << "# weaker,stronger,attribute,origin,confidence\n";
  for (const auto& r : records) {
    out << r.weaker << ',' << r.stronger << ',' << vocab.name(r.attribute);
    if (with_origin) {
      out << ',' << to_string(r.origin) << ',' << text::format_double(r.confidence);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits

namespace {

constexpr const char* kSplitNames[] = {"train", "validation", "test_seen", "test_unseen"};

std::vector<std::string>* section(SpeakerSplit& s, std::string_view name) {
  if (name == "train") return &s.train;
  if (name == "validation") return &s.validation;
  if (name == "test_seen") return &s.test_seen;
  if (name == "test_unseen") return &s.test_unseen;
  return nullptr;
}

}  // namespace

SpeakerSplit load_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open split file " + path.string());
  SpeakerSplit split;
  std::vector<std::string>* current = nullptr;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError(where(path, lineno) + ": bad section header");
      current = section(split, s.substr(1, s.size() - 2));
      if (current == nullptr) {
        throw ParseError(where(path, lineno) + ": unknown section " + std::string(s));
      }
      continue;
    }
    if (current == nullptr) throw ParseError(where(path, lineno) + ": speaker outside a section");
    current->emplace_back(s);
  }
  return split;
}

void save_split(const SpeakerSplit& split, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  SpeakerSplit copy = split;
  for (const char* name : kSplitNames) {
    out << '[' << name << "]\n";
    for (const auto& spk : *section(copy, name)) out << spk << '\n';
  }
}

void check_split(const SpeakerSplit& split) {
  std::set<std::string> train(split.train.begin(), split.train.end());
  for (const auto& s : split.test_unseen) {
    if (train.count(s) != 0) {
      throw CorpusError("speaker '" + s + "' is both a training and an unseen-test speaker");
    }
  }
}

// ---------------------------------------------------------------------------
// Utterance expansion

std::vector<TrainingExample> expand_to_utterance_pairs(
    const std::vector<ComparisonRecord>& records, const EmbeddingStore& store,
    std::size_t per_pair, bool swap_augment, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<TrainingExample> out;
  for (const auto& r : records) {
    const auto& ua = store.utterances_of(r.weaker);
    const auto& ub = store.utterances_of(r.stronger);
    if (ua.empty()) throw CorpusError("speaker '" + r.weaker + "' has no utterances in store");
    if (ub.empty()) throw CorpusError("speaker '" + r.stronger + "' has no utterances in store");
    if (store.gender_of(r.weaker) != store.gender_of(r.stronger)) {
      throw CorpusError("record pairs speakers of different gender: " + r.weaker + ", " +
                        r.stronger);
    }
    const std::size_t combos = ua.size() * ub.size();
    std::vector<std::size_t> pick(combos);
    std::iota(pick.begin(), pick.end(), 0);
    if (per_pair < combos) {
      std::shuffle(pick.begin(), pick.end(), gen);
      pick.resize(per_pair);
      std::sort(pick.begin(), pick.end());
    }
    for (std::size_t c : pick) {
      EmbeddingPtr a = store.at(ua[c / ub.size()]);
      EmbeddingPtr b = store.at(ub[c % ub.size()]);
      out.push_back(TrainingExample{a, b, r.attribute, 1, r.origin});
      if (swap_augment) out.push_back(TrainingExample{b, a, r.attribute, 0, r.origin});
    }
  }
  return out;
}

CorpusSplit make_corpus_split(const RecordSplit& records, const SpeakerSplit& speakers,
                              const EmbeddingStore& store, const ExpandConfig& cfg,
                              std::uint64_t seed) {
  check_split(speakers);
  CorpusSplit split;
  split.speakers = speakers;
  split.train = expand_to_utterance_pairs(records.train, store, cfg.per_pair, cfg.swap_augment, seed);
  split.validation = expand_to_utterance_pairs(records.validation, store, cfg.per_pair,
                                               cfg.swap_augment, seed + 1);
  split.test_seen = expand_to_utterance_pairs(records.test_seen, store, cfg.per_pair,
                                              cfg.swap_augment, seed + 2);
  split.test_unseen = expand_to_utterance_pairs(records.test_unseen, store, cfg.per_pair,
                                                cfg.swap_augment, seed + 3);
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_speakers < 4) throw CorpusError("synth: n_speakers must be >= 4");
  if (cfg.utt_per_speaker < 1) throw CorpusError("synth: utt_per_speaker must be >= 1");
  if (cfg.d < 1 || cfg.k < 1) throw CorpusError("synth: d and k must be positive");
  if (!(cfg.margin > 0.0)) throw CorpusError("synth: margin must be > 0");
  if (cfg.noise < 0.0) throw CorpusError("synth: noise must be >= 0");
  if (!(cfg.unseen_fraction > 0.0 && cfg.unseen_fraction < 1.0)) {
    throw CorpusError("synth: unseen_fraction must be in (0,1)");
  }
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 0.5)) {
    throw CorpusError("synth: holdout_fraction must be in [0,0.5)");
  }
  if (cfg.tail_attributes > cfg.k) throw CorpusError("synth: tail_attributes exceeds k");

  std::mt19937_64 gen(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthCorpus c;
  c.vocab = AttributeVocab::numbered(cfg.k);
  c.store = EmbeddingStore(cfg.d);

  const auto n = static_cast<Eigen::Index>(cfg.n_speakers);
  const auto k = static_cast<Eigen::Index>(cfg.k);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  c.latent.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) c.latent(i, j) = unif(gen);

  // Columns have unit expected squared norm per embedding coordinate.
  Eigen::MatrixXd map(d, k);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.k));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) map(i, j) = normal(gen) * map_scale;

  std::vector<Gender> genders;
  for (std::size_t i = 0; i < cfg.n_speakers; ++i) {
    std::ostringstream os;
    os << "spk" << std::setw(3) << std::setfill('0') << i;
    c.speaker_ids.push_back(os.str());
    genders.push_back(i % 2 == 0 ? Gender::kMale : Gender::kFemale);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd clean = map * c.latent.row(i).transpose();
    for (std::size_t u = 0; u < cfg.utt_per_speaker; ++u) {
      EmbeddingVector v;
      v.speaker_id = c.speaker_ids[static_cast<std::size_t>(i)];
      std::ostringstream os;
      os << v.speaker_id << "_u" << std::setw(3) << std::setfill('0') << u;
      v.utterance_id = os.str();
      v.gender = genders[static_cast<std::size_t>(i)];
      v.values.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) {
        const double x = clean(j) + (cfg.noise > 0.0 ? cfg.noise * normal(gen) : 0.0);
        // Round through float so the store round-trips through the blob.
        v.values(j) = static_cast<double>(static_cast<float>(x));
      }
      c.store.add(std::move(v));
    }
  }

  // Records over same-gender pairs, emitted in canonical (i, j, attr) order.
  // Long-tail thinning is decided here but applied only to records between
  // seen speakers, so the unseen test set stays complete.
  std::vector<bool> tail_drop;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (genders[static_cast<std::size_t>(i)] != genders[static_cast<std::size_t>(j)]) continue;
      for (Eigen::Index a = 0; a < k; ++a) {
        const double diff = c.latent(j, a) - c.latent(i, a);
        const bool tail = static_cast<std::size_t>(a) >= cfg.k - cfg.tail_attributes;
        const double keep_draw = unif(gen);
        if (std::abs(diff) <= cfg.margin) continue;
        tail_drop.push_back(tail && keep_draw >= cfg.tail_keep);
        const auto& lo = c.speaker_ids[static_cast<std::size_t>(diff > 0 ? i : j)];
        const auto& hi = c.speaker_ids[static_cast<std::size_t>(diff > 0 ? j : i)];
        c.records.push_back(ComparisonRecord{lo, hi, static_cast<std::size_t>(a),
                                             Origin::kAnnotated, 1.0});
      }
    }
  }
  if (c.records.empty()) throw CorpusError("synth: empty corpus (margin too large?)");

  // Per-gender unseen speaker selection.
  std::set<std::string> unseen;
  for (Gender g : {Gender::kMale, Gender::kFemale}) {
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < cfg.n_speakers; ++i)
      if (genders[i] == g) pool.push_back(c.speaker_ids[i]);
    std::shuffle(pool.begin(), pool.end(), gen);
    auto take = static_cast<std::size_t>(
        std::llround(cfg.unseen_fraction * static_cast<double>(pool.size())));
    take = std::clamp<std::size_t>(take, 1, pool.size() - 1);
    unseen.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  for (const auto& s : c.speaker_ids) {
    if (unseen.count(s) != 0) {
      c.speakers.test_unseen.push_back(s);
    } else {
      c.speakers.train.push_back(s);
    }
  }
  c.speakers.validation = c.speakers.train;
  c.speakers.test_seen = c.speakers.train;

  std::vector<ComparisonRecord> kept;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const auto& r = c.records[i];
    const bool seen = unseen.count(r.weaker) == 0 && unseen.count(r.stronger) == 0;
    if (!(seen && tail_drop[i])) kept.push_back(r);
  }
  c.records = std::move(kept);

  std::vector<const ComparisonRecord*> seen_pool;
  for (const auto& r : c.records) {
    const bool wu = unseen.count(r.weaker) != 0;
    const bool su = unseen.count(r.stronger) != 0;
    if (wu && su) {
      c.split.test_unseen.push_back(r);
    } else if (!wu && !su) {
      seen_pool.push_back(&r);
    }
  }
  std::vector<std::size_t> order(seen_pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen);
  const auto hold = static_cast<std::size_t>(
      std::floor(cfg.holdout_fraction * static_cast<double>(seen_pool.size())));
  std::vector<int> bucket(seen_pool.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < hold) {
      bucket[order[i]] = 1;
    } else if (i < 2 * hold) {
      bucket[order[i]] = 2;
    }
  }
  for (std::size_t i = 0; i < seen_pool.size(); ++i) {
    switch (bucket[i]) {
      case 1: c.split.validation.push_back(*seen_pool[i]); break;
      case 2: c.split.test_seen.push_back(*seen_pool[i]); break;
      default: c.split.train.push_back(*seen_pool[i]); break;
    }
  }
  if (c.split.train.empty()) throw CorpusError("synth: empty training split");
  return c;
}

}  // namespace relattr::corpus
