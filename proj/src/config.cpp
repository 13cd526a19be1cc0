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


#include "relattr/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "relattr/text.hpp"

namespace relattr::config {

namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Accessors return a mutable reference; the getter side casts const away
// only to read.
template <typename T, typename Ref>
Field make_field(std::string key, Ref ref) {
  Field f;
  f.key = std::move(key);
  f.set = [ref](RunConfig& c, std::string_view v, const std::string& where) {
    T& slot = ref(c);
    if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1") {
        slot = true;
      } else if (v == "false" || v == "0") {
        slot = false;
      } else {
        throw ConfigError(where + ": expected true or false, got '" + std::string(v) + "'");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      slot = text::parse_double(v, where);
    } else {
      slot = static_cast<T>(text::parse_size(v, where));
    }
  };
  f.get = [ref](const RunConfig& c) {
    const T& slot = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(slot ? "true" : "false");
    } else if constexpr (std::is_same_v<T, double>) {
      return text::format_double(slot);
    } else {
      return std::to_string(slot);
    }
  };
  return f;
}

#define RELATTR_FIELD(T, key, member) \
  make_field<T>(key, [](RunConfig& c) -> T& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t = {
        RELATTR_FIELD(std::uint64_t, "seed", seed),
        RELATTR_FIELD(std::size_t, "synth.n_speakers", synth.n_speakers),
        RELATTR_FIELD(std::size_t, "synth.utt_per_speaker", synth.utt_per_speaker),
        RELATTR_FIELD(std::size_t, "synth.d", synth.d),
        RELATTR_FIELD(std::size_t, "synth.k", synth.k),
        RELATTR_FIELD(double, "synth.margin", synth.margin),
        RELATTR_FIELD(double, "synth.noise", synth.noise),
        RELATTR_FIELD(double, "synth.unseen_fraction", synth.unseen_fraction),
        RELATTR_FIELD(double, "synth.holdout_fraction", synth.holdout_fraction),
        RELATTR_FIELD(std::size_t, "synth.tail_attributes", synth.tail_attributes),
        RELATTR_FIELD(double, "synth.tail_keep", synth.tail_keep),
        RELATTR_FIELD(std::size_t, "corpus.per_pair", expand.per_pair),
        RELATTR_FIELD(bool, "corpus.swap_augment", expand.swap_augment),
        RELATTR_FIELD(std::size_t, "mining.min_path_len", mining.min_path_len),
        RELATTR_FIELD(std::size_t, "mining.min_votes", mining.min_votes),
        RELATTR_FIELD(std::uint64_t, "mining.path_count_cap", mining.path_count_cap),
        RELATTR_FIELD(std::size_t, "model.d", model.d),
        RELATTR_FIELD(std::size_t, "model.k", model.k),
        RELATTR_FIELD(std::size_t, "model.n_heads", model.n_heads),
        RELATTR_FIELD(double, "model.lambda_init", model.lambda_init),
        RELATTR_FIELD(std::size_t, "model.scale_hidden", model.scale_hidden),
        RELATTR_FIELD(std::size_t, "model.predictor_hidden", model.predictor_hidden),
        RELATTR_FIELD(double, "model.dropout_rate", model.dropout_rate),
        RELATTR_FIELD(bool, "model.use_value_projection", model.use_value_projection),
        RELATTR_FIELD(bool, "model.full_dim_scaling", model.full_dim_scaling),
        RELATTR_FIELD(bool, "model.bypass_attention", model.bypass_attention),
        RELATTR_FIELD(double, "train.lr", train.lr),
        RELATTR_FIELD(double, "train.beta1", train.beta1),
        RELATTR_FIELD(double, "train.beta2", train.beta2),
        RELATTR_FIELD(double, "train.eps", train.eps),
        RELATTR_FIELD(std::size_t, "train.epochs", train.epochs),
        RELATTR_FIELD(std::size_t, "train.batch_size", train.batch_size),
        RELATTR_FIELD(bool, "train.shuffle", train.shuffle),
        RELATTR_FIELD(std::size_t, "train.checkpoint_every", train.checkpoint_every),
        RELATTR_FIELD(bool, "train.log_time", log_time),
        RELATTR_FIELD(bool, "ablation.no_augment", ablations.no_augment),
        RELATTR_FIELD(bool, "ablation.no_rtsa2", ablations.no_rtsa2),
        RELATTR_FIELD(bool, "ablation.no_value_projection", ablations.no_value_projection),
    };
    // Optional and enumerated values.
    t.push_back(Field{
        "mining.max_path_len",
        [](RunConfig& c, std::string_view v, const std::string& where) {
          if (v == "none") {
            c.mining.max_path_len.reset();
          } else {
            c.mining.max_path_len = text::parse_size(v, where);
          }
        },
        [](const RunConfig& c) {
          return c.mining.max_path_len ? std::to_string(*c.mining.max_path_len)
                                       : std::string("none");
        }});
    t.push_back(Field{
        "mining.confidence_rule",
        [](RunConfig& c, std::string_view v, const std::string& where) {
          if (v == "vote_fraction") {
            c.mining.confidence_rule = graph::ConfidenceRule::kVoteFraction;
          } else if (v == "constant") {
            c.mining.confidence_rule = graph::ConfidenceRule::kConstant;
          } else {
            throw ConfigError(where + ": expected vote_fraction or constant");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.mining.confidence_rule == graph::ConfidenceRule::kConstant
                                 ? "constant"
                                 : "vote_fraction");
        }});
    t.push_back(Field{
        "train.grad_clip",
        [](RunConfig& c, std::string_view v, const std::string& where) {
          if (v == "none") {
            c.train.grad_clip.reset();
          } else {
            c.train.grad_clip = text::parse_double(v, where);
          }
        },
        [](const RunConfig& c) {
          return c.train.grad_clip ? text::format_double(*c.train.grad_clip) : std::string("none");
        }});
    return t;
  }();
  return table;
}

#undef RELATTR_FIELD

void set_at(RunConfig& cfg, std::string_view key, std::string_view value,
            const std::string& where) {
  key = text::trim(key);
  value = text::trim(value);
  for (const Field& f : fields()) {
    if (f.key == key) {
      try {
        f.set(cfg, value, where);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(std::string(e.what()) + " (key " + f.key + ")");
      }
      cfg.explicit_keys.insert(f.key);
      return;
    }
  }
  throw ConfigError(where + ": unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  set_at(*this, key, value, "config");
}

bool RunConfig::is_explicit(std::string_view key) const {
  return explicit_keys.count(std::string(key)) != 0;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const Field& f : fields()) os << f.key << '=' << f.get(*this) << '\n';
  return os.str();
}

void RunConfig::resolve_seeds() {
  synth.seed = seed;
  train.seed = seed;
}

void load_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = text::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value");
    set_at(cfg, s.substr(0, eq), s.substr(eq + 1), where);
  }
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  set_at(cfg, assignment.substr(0, eq), assignment.substr(eq + 1), "--set");
}

}  // namespace relattr::config
