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

#include "relattr/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace relattr::eval {

std::optional<double> accuracy(std::span<const ScoredPair> pairs, double threshold) {
  if (pairs.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (const auto& p : pairs) hit += (p.score >= threshold) == (p.label == 1) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

EerResult eer(std::span<const ScoredPair> pairs) {
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(pairs.size());
  std::size_t n_pos = 0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.score)) throw EvalError("eer: non-finite score");
    sorted.emplace_back(p.score, p.label == 1 ? 1 : 0);
    n_pos += p.label == 1 ? 1 : 0;
  }
  const std::size_t n_neg = sorted.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw EvalError("eer: undefined without both positive and negative pairs");
  }
  std::sort(sorted.begin(), sorted.end());

  // Operating points at each distinct score (ascending) and one above the max.
  struct Point {
    double threshold, fpr, fnr;
  };
  std::vector<Point> points;
  std::size_t pos_below = 0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].first;
    points.push_back({t, static_cast<double>(n_neg - neg_below) / static_cast<double>(n_neg),
                      static_cast<double>(pos_below) / static_cast<double>(n_pos)});
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second == 1 ? pos_below : neg_below) += 1;
      ++i;
    }
  }
  points.push_back({std::nextafter(sorted.back().first, std::numeric_limits<double>::infinity()),
                    0.0, 1.0});

  for (std::size_t i = 0; i < points.size(); ++i) {
    const double diff = points[i].fpr - points[i].fnr;
    if (diff > 0.0) continue;
    if (diff == 0.0 || i == 0) return {points[i].fpr, points[i].threshold};
    const Point& a = points[i - 1];
    const Point& b = points[i];
    const double da = a.fpr - a.fnr;
    const double alpha = da / (da - diff);
    return {a.fpr + alpha * (b.fpr - a.fpr), a.threshold + alpha * (b.threshold - a.threshold)};
  }
  return {points.back().fpr, points.back().threshold};  // unreachable: last diff is -1
}

const Cell& EvalReport::cell(Group g, corpus::Gender s) const {
  return cells[g == Group::kSeen ? 0 : 1][s == corpus::Gender::kMale ? 0 : 1];
}

bool EvalReport::complete() const {
  for (const auto& row : cells)
    for (const auto& c : row)
      if (!c.acc || !c.eer) return false;
  return true;
}

namespace {

Cell make_cell(std::span<const ScoredPair> pairs) {
  Cell c;
  c.count = pairs.size();
  c.acc = accuracy(pairs);
  const bool has_pos = std::any_of(pairs.begin(), pairs.end(), [](auto& p) { return p.label == 1; });
  const bool has_neg = std::any_of(pairs.begin(), pairs.end(), [](auto& p) { return p.label != 1; });
  if (has_pos && has_neg) c.eer = eer(pairs).eer;
  return c;
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * *v;
  return os.str();
}

std::string frac(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << *v;
  return os.str();
}

}  // namespace

EvalReport build_report(std::span<const ScoredPair> pairs, std::size_t k) {
  EvalReport r;
  for (int g = 0; g < 2; ++g) {
    for (int s = 0; s < 2; ++s) {
      std::vector<ScoredPair> sel;
      for (const auto& p : pairs) {
        if ((p.group == Group::kSeen ? 0 : 1) == g &&
            (p.gender == corpus::Gender::kMale ? 0 : 1) == s) {
          sel.push_back(p);
        }
      }
      r.cells[g][s] = make_cell(sel);
    }
    if (r.cells[g][0].acc && r.cells[g][1].acc) {
      r.avg_acc[g] = 0.5 * (*r.cells[g][0].acc + *r.cells[g][1].acc);
    }
  }
  r.attribute_acc.assign(k, std::nullopt);
  r.attribute_count.assign(k, 0);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<ScoredPair> sel;
    for (const auto& p : pairs)
      if (p.attribute == a) sel.push_back(p);
    r.attribute_count[a] = sel.size();
    r.attribute_acc[a] = accuracy(sel);
  }
  r.overall = make_cell(pairs);
  return r;
}

std::vector<ScoredPair> score_split(const corpus::CorpusSplit& split, rtsa2::ModelParams& params,
                                    const rtsa2::ModelConfig& cfg) {
  std::vector<ScoredPair> out;
  auto add = [&](const std::vector<corpus::TrainingExample>& examples, Group group) {
    if (examples.empty()) return;
    for (const auto& ex : examples) {
      if (static_cast<std::size_t>(ex.emb_a->values.size()) != cfg.d) {
        throw EvalError("evaluate: embedding dimension does not match the checkpoint");
      }
    }
    const auto scores = rtsa2::predict(examples, params, cfg);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      out.push_back(ScoredPair{scores[i], examples[i].label, examples[i].emb_a->gender, group,
                               examples[i].attribute});
    }
  };
  add(split.test_seen, Group::kSeen);
  add(split.test_unseen, Group::kUnseen);
  return out;
}

EvalReport evaluate(rtsa2::ModelParams& params, const rtsa2::ModelConfig& cfg,
                    const corpus::CorpusSplit& split) {
  const auto pairs = score_split(split, params, cfg);
  return build_report(pairs, cfg.k);
}

std::string format_report_text(const EvalReport& report, const corpus::AttributeVocab& vocab) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "group" << std::setw(16) << "ACC% (M/F)" << std::setw(16)
     << "EER% (M/F)" << std::setw(10) << "Avg ACC" << "pairs (M/F)\n";
  const char* names[2] = {"seen", "unseen"};
  for (int g = 0; g < 2; ++g) {
    const auto& m = report.cells[g][0];
    const auto& f = report.cells[g][1];
    os << std::left << std::setw(8) << names[g] << std::setw(16) << (pct(m.acc) + "/" + pct(f.acc))
       << std::setw(16) << (pct(m.eer) + "/" + pct(f.eer)) << std::setw(10)
       << pct(report.avg_acc[g]) << m.count << "/" << f.count << '\n';
  }
  os << "\nper-attribute ACC%\n";
  for (std::size_t a = 0; a < report.attribute_acc.size(); ++a) {
    if (report.attribute_count[a] == 0) continue;
    os << "  " << std::left << std::setw(20) << vocab.name(a) << std::setw(8)
       << pct(report.attribute_acc[a]) << "n=" << report.attribute_count[a] << '\n';
  }
  os << "\noverall ACC% " << pct(report.overall.acc) << "  EER% " << pct(report.overall.eer)
     << "  n=" << report.overall.count << '\n';
  if (!report.complete()) os << "WARNING: at least one gender x group cell is empty\n";
  return os.str();
}

std::string format_report_csv(const EvalReport& report, const corpus::AttributeVocab& vocab) {
  std::ostringstream os;
  os << "section,group,gender,attribute,count,acc,eer\n";
  const char* groups[2] = {"seen", "unseen"};
  const char* genders[2] = {"M", "F"};
  for (int g = 0; g < 2; ++g) {
    for (int s = 0; s < 2; ++s) {
      const auto& c = report.cells[g][s];
      os << "cell," << groups[g] << ',' << genders[s] << ",," << c.count << ',' << frac(c.acc)
         << ',' << frac(c.eer) << '\n';
    }
    os << "avg," << groups[g] << ",,,," << frac(report.avg_acc[g]) << ",\n";
  }
  for (std::size_t a = 0; a < report.attribute_acc.size(); ++a) {
    os << "attribute,,," << vocab.name(a) << ',' << report.attribute_count[a] << ','
       << frac(report.attribute_acc[a]) << ",\n";
  }
  os << "overall,,,," << report.overall.count << ',' << frac(report.overall.acc) << ','
     << frac(report.overall.eer) << '\n';
  return os.str();
}

}  // namespace relattr::eval
