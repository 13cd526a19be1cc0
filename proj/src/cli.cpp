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


#include "relattr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "relattr/config.hpp"
#include "relattr/corpus.hpp"
#include "relattr/evaluator.hpp"
#include "relattr/graph_augment.hpp"
#include "relattr/rtsa2.hpp"
#include "relattr/trainer.hpp"

namespace relattr::cli {

namespace fs = std::filesystem;

namespace {

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log(const std::string& msg) { std::cerr << "[relattr] " << msg << '\n'; }

fs::path require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingFileError("missing input file " + p.string());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config_path, "key=value config file");
  sub->add_option("--seed", o.seed, "run seed (overrides the config)");
  sub->add_option("--out-dir", o.out_dir, "output directory");
  sub->add_option("--set", o.overrides, "override one config key: key=value");
}

config::RunConfig resolve(const CommonOptions& o) {
  config::RunConfig cfg;
  if (!o.config_path.empty()) config::load_file(cfg, require_file(o.config_path));
  for (const auto& s : o.overrides) config::apply_override(cfg, s);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.explicit_keys.insert("seed");
  }
  cfg.resolve_seeds();
  return cfg;
}

// Fills model.d / model.k from the data unless set explicitly, in which
// case they must agree.
void bind_model_shape(config::RunConfig& cfg, std::size_t d, std::size_t k) {
  if (cfg.is_explicit("model.d") && cfg.model.d != d) {
    throw config::ConfigError("model.d=" + std::to_string(cfg.model.d) +
                              " conflicts with embedding dimension " + std::to_string(d));
  }
  if (cfg.is_explicit("model.k") && cfg.model.k != k) {
    throw config::ConfigError("model.k=" + std::to_string(cfg.model.k) +
                              " conflicts with vocabulary size " + std::to_string(k));
  }
  cfg.model.d = d;
  cfg.model.k = k;
}

void log_config(const config::RunConfig& cfg, const fs::path& out_dir) {
  const std::string text = cfg.dump();
  std::istringstream in(text);
  std::string line;
  log("resolved config:");
  while (std::getline(in, line)) std::cerr << "  " << line << '\n';
  write_text(out_dir / "config.txt", text);
}

fs::path prepare_out_dir(const CommonOptions& o) {
  fs::path out(o.out_dir);
  fs::create_directories(out);
  return out;
}

struct CorpusDir {
  corpus::AttributeVocab vocab;
  corpus::EmbeddingStore store;
  corpus::RecordSplit records;
  corpus::SpeakerSplit speakers;
};

CorpusDir load_corpus_dir(const fs::path& dir, const std::string& train_records) {
  CorpusDir c;
  c.vocab = corpus::AttributeVocab::load(require_file(dir / kVocabFile));
  c.store = corpus::load_embedding_store(require_file(dir / kManifestFile));
  c.speakers = corpus::load_split(require_file(dir / kSplitFile));
  corpus::check_split(c.speakers);
  const fs::path train = train_records.empty() ? dir / kTrainFile : fs::path(train_records);
  c.records.train = corpus::parse_annotations(require_file(train), c.vocab);
  c.records.validation = corpus::parse_annotations(require_file(dir / kValidationFile), c.vocab);
  c.records.test_seen = corpus::parse_annotations(require_file(dir / kTestSeenFile), c.vocab);
  c.records.test_unseen = corpus::parse_annotations(require_file(dir / kTestUnseenFile), c.vocab);
  return c;
}

int cmd_synth(const CommonOptions& o) {
  config::RunConfig cfg = resolve(o);
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);
  const corpus::SynthCorpus sc = corpus::synth_corpus(cfg.synth);
  sc.vocab.save(out / kVocabFile);
  corpus::write_embedding_store(sc.store, out / kManifestFile, kBlobFile);
  corpus::save_split(sc.speakers, out / kSplitFile);
  corpus::write_annotations(sc.split.train, sc.vocab, out / kTrainFile, false);
  corpus::write_annotations(sc.split.validation, sc.vocab, out / kValidationFile, false);
  corpus::write_annotations(sc.split.test_seen, sc.vocab, out / kTestSeenFile, false);
  corpus::write_annotations(sc.split.test_unseen, sc.vocab, out / kTestUnseenFile, false);
  log("synth: " + std::to_string(sc.store.size()) + " utterances, " +
      std::to_string(sc.records.size()) + " records (train " +
      std::to_string(sc.split.train.size()) + ", validation " +
      std::to_string(sc.split.validation.size()) + ", test_seen " +
      std::to_string(sc.split.test_seen.size()) + ", test_unseen " +
      std::to_string(sc.split.test_unseen.size()) + ")");
  return kOk;
}

int cmd_augment(const CommonOptions& o, const std::string& corpus_dir,
                const std::string& records_path) {
  config::RunConfig cfg = resolve(o);
  cfg.mining.validate();
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);
  const fs::path dir(corpus_dir);
  const auto vocab = corpus::AttributeVocab::load(require_file(dir / kVocabFile));
  const fs::path in = records_path.empty() ? dir / kTrainFile : fs::path(records_path);
  const auto records = corpus::parse_annotations(require_file(in), vocab);
  const graph::AugmentResult result = graph::augment_all(records, vocab, cfg.mining);
  corpus::write_annotations(result.records, vocab, out / "train_augmented.txt", true);
  const std::string table = graph::format_stats_text(result.stats, vocab);
  write_text(out / "augment_stats.txt", table);
  graph::write_stats_kv(result.stats, vocab, out / "augment_stats.kv");
  std::cout << table;
  log("augment: " + std::to_string(result.stats.total_mined()) + " mined pairs, " +
      std::to_string(result.stats.total_cycles()) + " inconsistent components");
  return kOk;
}

int cmd_train(const CommonOptions& o, const std::string& corpus_dir,
              const std::string& records_path, const trainer::Ablations& flags) {
  config::RunConfig cfg = resolve(o);
  cfg.ablations.no_augment |= flags.no_augment;
  cfg.ablations.no_rtsa2 |= flags.no_rtsa2;
  cfg.ablations.no_value_projection |= flags.no_value_projection;
  const CorpusDir c = load_corpus_dir(corpus_dir, records_path);
  bind_model_shape(cfg, c.store.dim(), c.vocab.size());
  cfg.train.validate();
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);

  const corpus::CorpusSplit split =
      corpus::make_corpus_split(c.records, c.speakers, c.store, cfg.expand, cfg.seed);
  log("train: " + std::to_string(split.train.size()) + " training examples, " +
      std::to_string(split.validation.size()) + " validation examples");
  trainer::TrainOptions options;
  if (cfg.train.checkpoint_every > 0) options.checkpoint_dir = out;
  trainer::TrainResult result = trainer::train(split, cfg.train, cfg.model, cfg.ablations, options);
  rtsa2::save_checkpoint(out / "checkpoint.bin", result.model_config, result.params);
  trainer::write_history_csv(result.history, out / "history.csv", cfg.log_time);
  for (const auto& e : result.history.epochs) {
    std::ostringstream os;
    os << "epoch " << e.epoch << " loss " << e.train_loss;
    if (e.val_acc) os << " val_acc " << *e.val_acc;
    log(os.str());
  }
  if (result.diverged) {
    log("train: " + result.diagnostic + "; kept the last good checkpoint");
    return kDiverged;
  }
  log("train: best epoch " + std::to_string(result.best_epoch));
  return kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& corpus_dir,
             const std::string& checkpoint) {
  config::RunConfig cfg = resolve(o);
  auto [model_cfg, params] = rtsa2::load_checkpoint(require_file(checkpoint));
  CorpusDir c = load_corpus_dir(corpus_dir, "");
  if (model_cfg.d != c.store.dim() || model_cfg.k != c.vocab.size()) {
    throw eval::EvalError("checkpoint shape (d=" + std::to_string(model_cfg.d) +
                          ", k=" + std::to_string(model_cfg.k) +
                          ") does not match the corpus (d=" + std::to_string(c.store.dim()) +
                          ", k=" + std::to_string(c.vocab.size()) + ")");
  }
  cfg.model = model_cfg;
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);
  c.records.train.clear();
  c.records.validation.clear();
  const corpus::CorpusSplit split =
      corpus::make_corpus_split(c.records, c.speakers, c.store, cfg.expand, cfg.seed);
  const eval::EvalReport report = eval::evaluate(params, model_cfg, split);
  const std::string text = eval::format_report_text(report, c.vocab);
  write_text(out / "report.txt", text);
  write_text(out / "report.csv", eval::format_report_csv(report, c.vocab));
  std::cout << text;
  if (!report.complete()) {
    log("eval: a gender x group cell is empty");
    return kCheckFailed;
  }
  return kOk;
}

int cmd_gradcheck(const CommonOptions& o, std::size_t seeds, std::size_t batch, bool train_mode) {
  config::RunConfig cfg = resolve(o);
  // Small default shape; every model key can still be overridden.
  const std::pair<const char*, std::size_t> small[] = {
      {"model.d", 16}, {"model.k", 4}, {"model.n_heads", 2},
      {"model.scale_hidden", 8}, {"model.predictor_hidden", 12}};
  for (const auto& [key, value] : small) {
    if (!cfg.is_explicit(key)) cfg.set(key, std::to_string(value));
  }
  cfg.model.validate();
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);
  double worst = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    rtsa2::GradCheckOptions opt;
    opt.seed = cfg.seed + s;
    opt.batch = batch;
    opt.train_mode = train_mode;
    const nd::GradCheckResult r = rtsa2::check_model_gradients(cfg.model, opt);
    std::ostringstream os;
    os << "seed " << opt.seed << ": " << r.coordinates << " coordinates, max relative error "
       << r.max_rel_error << " at " << r.worst;
    log(os.str());
    worst = std::max(worst, r.max_rel_error);
  }
  const bool ok = worst < 1e-4;
  std::cout << "gradcheck max_rel_error=" << worst << (ok ? " PASS" : " FAIL") << '\n';
  return ok ? kOk : kCheckFailed;
}

int cmd_inspect(const CommonOptions& o, const std::string& corpus_dir,
                const std::string& checkpoint, std::string utt_a, std::string utt_b,
                const std::string& attribute) {
  config::RunConfig cfg = resolve(o);
  auto [model_cfg, params] = rtsa2::load_checkpoint(require_file(checkpoint));
  const fs::path dir(corpus_dir);
  const auto vocab = corpus::AttributeVocab::load(require_file(dir / kVocabFile));
  const auto store = corpus::load_embedding_store(require_file(dir / kManifestFile));
  if (model_cfg.d != store.dim()) {
    throw corpus::CorpusError("checkpoint dimension does not match the embedding store");
  }
  cfg.model = model_cfg;
  const fs::path out = prepare_out_dir(o);
  log_config(cfg, out);
  if (utt_a.empty() || utt_b.empty()) {
    const auto records = corpus::parse_annotations(require_file(dir / kTestUnseenFile), vocab);
    if (records.empty()) throw corpus::CorpusError("inspect: no test_unseen record to default to");
    utt_a = store.utterances_of(records.front().weaker).at(0);
    utt_b = store.utterances_of(records.front().stronger).at(0);
  }
  if (!store.contains(utt_a)) throw corpus::CorpusError("unknown utterance " + utt_a);
  if (!store.contains(utt_b)) throw corpus::CorpusError("unknown utterance " + utt_b);
  const rtsa2::ForwardTrace t =
      rtsa2::forward(*store.at(utt_a), *store.at(utt_b), params, model_cfg, false);

  nlohmann::ordered_json j;
  j["utterance_a"] = utt_a;
  j["utterance_b"] = utt_b;
  j["lambdas"] = t.lambdas;
  j["gamma"] = t.gamma;
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& m : t.attn_maps) {
    maps.push_back({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}});
  }
  j["attention"] = maps;
  j["delta_hat_norm"] = t.delta_hat.norm();
  j["e_a_att_norm"] = t.e_a_att.norm();
  j["e_b_att_norm"] = t.e_b_att.norm();
  nlohmann::ordered_json probs;
  for (std::size_t a = 0; a < vocab.size(); ++a) {
    probs[vocab.name(a)] = t.probs(static_cast<Eigen::Index>(a));
  }
  j["probs"] = probs;
  if (!attribute.empty()) {
    j["target"] = {{"attribute", attribute},
                   {"prob", t.probs(static_cast<Eigen::Index>(vocab.index_of(attribute)))}};
  }
  const std::string text = j.dump(2) + "\n";
  write_text(out / "trace.json", text);
  std::cout << text;
  return kOk;
}

int dispatch(CLI::App& app, std::vector<std::string> args) {
  CommonOptions common;
  std::string corpus_dir;
  std::string records;
  std::string checkpoint;
  trainer::Ablations flags;
  std::size_t seeds = 5;
  std::size_t batch = 4;
  bool train_mode = false;
  std::string utt_a;
  std::string utt_b;
  std::string attribute;

  app.require_subcommand(1, 1);
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus directory");
  add_common(synth, common);

  CLI::App* augment = app.add_subcommand("augment", "mine transitive pairs from train records");
  add_common(augment, common);
  augment->add_option("--corpus", corpus_dir, "corpus directory")->required();
  augment->add_option("--records", records, "records to augment (default: corpus train.txt)");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--records", records, "training records (default: corpus train.txt)");
  train->add_flag("--no-augment", flags.no_augment, "drop mined records");
  train->add_flag("--no-rtsa2", flags.no_rtsa2, "predict from the plain concatenation");
  train->add_flag("--no-value-proj", flags.no_value_projection, "disable the value projection");

  CLI::App* evalc = app.add_subcommand("eval", "score test sets and write the report");
  add_common(evalc, common);
  evalc->add_option("--corpus", corpus_dir, "corpus directory")->required();
  evalc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model");
  add_common(gradcheck, common);
  gradcheck->add_option("--seeds", seeds, "number of random draws")->check(CLI::PositiveNumber);
  gradcheck->add_option("--batch", batch, "pairs per draw")->check(CLI::PositiveNumber);
  gradcheck->add_flag("--train-mode", train_mode, "batch statistics and dropout");

  CLI::App* inspect = app.add_subcommand("inspect", "dump the forward trace of one pair");
  add_common(inspect, common);
  inspect->add_option("--corpus", corpus_dir, "corpus directory")->required();
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inspect->add_option("--utt-a", utt_a, "utterance A");
  inspect->add_option("--utt-b", utt_b, "utterance B");
  inspect->add_option("--attribute", attribute, "target attribute name");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (synth->parsed()) return cmd_synth(common);
  if (augment->parsed()) return cmd_augment(common, corpus_dir, records);
  if (train->parsed()) return cmd_train(common, corpus_dir, records, flags);
  if (evalc->parsed()) return cmd_eval(common, corpus_dir, checkpoint);
  if (gradcheck->parsed()) return cmd_gradcheck(common, seeds, batch, train_mode);
  return cmd_inspect(common, corpus_dir, checkpoint, utt_a, utt_b, attribute);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"relattr: relative voice timbre attribute detection"};
  try {
    return dispatch(app, args);
  } catch (const MissingFileError& e) {
    log(std::string("error: ") + e.what());
    return kMissingFile;
  } catch (const config::ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    log(std::string("config error: ") + e.what());
    return kUsage;
  } catch (const trainer::DivergenceError& e) {
    log(std::string("divergence: ") + e.what());
    return kDiverged;
  } catch (const std::runtime_error& e) {
    log(std::string("data error: ") + e.what());
    return kDataError;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return kInternal;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace relattr::cli
