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

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "relattr/rtsa2.hpp"
#include "relattr/text.hpp"

namespace relattr::rtsa2 {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'S', 'A', '2', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(buf_[i]); }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::string& s, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(n)));
}

std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "d=" << c.d << '\n'
     << "k=" << c.k << '\n'
     << "n_heads=" << c.n_heads << '\n'
     << "lambda_init=" << text::format_double(c.lambda_init) << '\n'
     << "scale_hidden=" << c.scale_hidden << '\n'
     << "predictor_hidden=" << c.predictor_hidden << '\n'
     << "dropout_rate=" << text::format_double(c.dropout_rate) << '\n'
     << "use_value_projection=" << c.use_value_projection << '\n'
     << "full_dim_scaling=" << c.full_dim_scaling << '\n'
     << "bypass_attention=" << c.bypass_attention << '\n';
  return os.str();
}

ModelConfig parse_config_text(const std::string& s) {
  std::map<std::string, std::string> kv;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(std::string("checkpoint config lacks ") + key);
    return it->second;
  };
  const std::string where = "checkpoint config";
  ModelConfig c;
  c.d = text::parse_size(get("d"), where);
  c.k = text::parse_size(get("k"), where);
  c.n_heads = text::parse_size(get("n_heads"), where);
  c.lambda_init = text::parse_double(get("lambda_init"), where);
  c.scale_hidden = text::parse_size(get("scale_hidden"), where);
  c.predictor_hidden = text::parse_size(get("predictor_hidden"), where);
  c.dropout_rate = text::parse_double(get("dropout_rate"), where);
  c.use_value_projection = get("use_value_projection") == "1";
  c.full_dim_scaling = get("full_dim_scaling") == "1";
  c.bypass_attention = get("bypass_attention") == "1";
  return c;
}

void put_block(Writer& w, const std::string& name, const nd::Matrix& m) {
  w.str(name);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     ModelParams& params) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.str(config_text(cfg));
  auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size() + 2));
  for (const auto& [name, t] : named) put_block(w, name, t->value);
  put_block(w, "pred.bn_running_mean", params.bn_stats.running_mean);
  put_block(w, "pred.bn_running_var", params.bn_stats.running_var);
  std::string out = w.data();
  Writer tail;
  tail.u32(crc(out, out.size()));
  out += tail.data();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing checkpoint " + path.string());
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  const std::size_t body = buf.size() - 4;
  Reader tail(buf, buf.size());
  tail.skip(body);
  if (tail.u32() != crc(buf, body)) throw CheckpointError(path.string() + ": checksum mismatch");

  Reader r(buf, body);
  r.skip(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  ModelConfig cfg = parse_config_text(r.str());
  cfg.validate();
  ModelParams params = init_params(cfg, 0);

  std::map<std::string, nd::Matrix*> slots;
  for (auto& [name, t] : params.named()) slots[name] = &t->value;
  slots["pred.bn_running_mean"] = &params.bn_stats.running_mean;
  slots["pred.bn_running_var"] = &params.bn_stats.running_var;

  const std::uint32_t n = r.u32();
  if (n != slots.size()) throw CheckpointError(path.string() + ": parameter block count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(path.string() + ": unknown block " + name);
    nd::Matrix& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) {
      throw CheckpointError(path.string() + ": shape mismatch for block " + name);
    }
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = r.f64();
    if (!m.allFinite()) throw CheckpointError(path.string() + ": non-finite values in " + name);
  }
  if (r.pos() != body) throw CheckpointError(path.string() + ": trailing bytes");
  return {cfg, std::move(params)};
}

}  // namespace relattr::rtsa2
