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

#include "relattr/graph_augment.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace relattr::graph {

namespace {

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b, std::uint64_t cap) {
  const std::uint64_t s = a + b;
  return (s < a || s > cap) ? cap : s;
}

// Counts length-bounded paths from `source` over nodes with allowed[x] set.
// total[x] saturates at `cap`; shortest[x] is kUnreached when x is not
// reached within `max_len` edges.
struct PathLayers {
  std::vector<std::uint64_t> total;
  std::vector<std::size_t> shortest;
};

PathLayers count_layers(const ComparisonGraph& g, NodeId source, std::size_t max_len,
                        std::uint64_t cap, const std::vector<char>& allowed) {
  const std::size_t n = g.node_count();
  PathLayers out{std::vector<std::uint64_t>(n, 0), std::vector<std::size_t>(n, kUnreached)};
  std::vector<std::uint64_t> cur(n, 0);
  std::vector<std::uint64_t> next(n, 0);
  cur[source] = 1;
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::fill(next.begin(), next.end(), 0);
    bool any = false;
    for (NodeId x = 0; x < n; ++x) {
      if (cur[x] == 0) continue;
      for (NodeId y : g.successors(x)) {
        if (!allowed[y]) continue;
        next[y] = sat_add(next[y], cur[x], cap);
        any = true;
      }
    }
    if (!any) break;
    for (NodeId y = 0; y < n; ++y) {
      if (next[y] == 0) continue;
      if (out.shortest[y] == kUnreached) out.shortest[y] = len;
      out.total[y] = sat_add(out.total[y], next[y], cap);
    }
    cur.swap(next);
  }
  return out;
}

std::vector<char> reachable_from(const ComparisonGraph& g, NodeId source,
                                 const std::vector<char>* allowed = nullptr) {
  std::vector<char> seen(g.node_count(), 0);
  std::deque<NodeId> queue{source};
  while (!queue.empty()) {
    NodeId x = queue.front();
    queue.pop_front();
    for (NodeId y : g.successors(x)) {
      if (allowed != nullptr && !(*allowed)[y]) continue;
      if (!seen[y]) {
        seen[y] = 1;
        queue.push_back(y);
      }
    }
  }
  return seen;
}

// Tarjan's algorithm, iterative. Returns the component id of every node.
std::vector<std::size_t> strong_components(const ComparisonGraph& g, std::size_t* count) {
  const std::size_t n = g.node_count();
  std::vector<std::size_t> index(n, kUnreached), low(n, 0), comp(n, kUnreached);
  std::vector<char> on_stack(n, 0);
  std::vector<NodeId> stack;
  std::vector<std::pair<NodeId, std::size_t>> call;  // (node, next successor)
  std::size_t counter = 0;
  std::size_t n_comp = 0;
  for (NodeId root = 0; root < n; ++root) {
    if (index[root] != kUnreached) continue;
    call.emplace_back(root, 0);
    while (!call.empty()) {
      auto& [v, next] = call.back();
      if (next == 0 && index[v] == kUnreached) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack[v] = 1;
      }
      const auto& succ = g.successors(v);
      if (next < succ.size()) {
        NodeId w = succ[next++];
        if (index[w] == kUnreached) {
          call.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        NodeId w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          comp[w] = n_comp;
        } while (w != v);
        ++n_comp;
      }
      const NodeId done = v;
      call.pop_back();
      if (!call.empty()) {
        NodeId parent = call.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }
  if (count != nullptr) *count = n_comp;
  return comp;
}

}  // namespace

// ---------------------------------------------------------------------------
// ComparisonGraph

std::optional<NodeId> ComparisonGraph::find(const std::string& name) const {
  auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it == names_.end() || *it != name) return std::nullopt;
  return static_cast<NodeId>(it - names_.begin());
}

bool ComparisonGraph::has_edge(NodeId u, NodeId v) const {
  const auto& s = out_.at(u);
  return std::binary_search(s.begin(), s.end(), v);
}

ComparisonGraph ComparisonGraph::from_edges(
    std::size_t attribute, const std::vector<std::pair<std::string, std::string>>& edges,
    const std::vector<std::string>& extra_nodes) {
  std::vector<corpus::ComparisonRecord> records;
  for (const auto& [a, b] : edges) {
    records.push_back(corpus::ComparisonRecord{a, b, attribute, corpus::Origin::kAnnotated, 1.0});
  }
  ComparisonGraph g = build_graph(records, attribute);
  if (extra_nodes.empty()) return g;
  // Rebuild with isolated nodes added.
  std::vector<std::string> names = g.names_;
  names.insert(names.end(), extra_nodes.begin(), extra_nodes.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  ComparisonGraph h;
  h.attribute_ = attribute;
  h.names_ = names;
  h.out_.assign(names.size(), {});
  h.in_.assign(names.size(), {});
  h.diagnostics_ = g.diagnostics_;
  for (const auto& [u, v] : g.edges_) {
    NodeId a = *h.find(g.names_[u]);
    NodeId b = *h.find(g.names_[v]);
    h.edges_.emplace_back(a, b);
  }
  std::sort(h.edges_.begin(), h.edges_.end());
  for (const auto& [a, b] : h.edges_) {
    h.out_[a].push_back(b);
    h.in_[b].push_back(a);
  }
  for (auto& s : h.out_) std::sort(s.begin(), s.end());
  for (auto& s : h.in_) std::sort(s.begin(), s.end());
  return h;
}

ComparisonGraph build_graph(const std::vector<corpus::ComparisonRecord>& records,
                            std::size_t attribute) {
  ComparisonGraph g;
  g.attribute_ = attribute;
  std::set<std::pair<std::string, std::string>> pairs;
  std::set<std::string> names;
  for (const auto& r : records) {
    if (r.attribute != attribute) continue;
    if (r.weaker == r.stronger) {
      g.diagnostics_.push_back("dropped self comparison of '" + r.weaker + "'");
      continue;
    }
    pairs.emplace(r.weaker, r.stronger);
    names.insert(r.weaker);
    names.insert(r.stronger);
  }
  g.names_.assign(names.begin(), names.end());
  g.out_.assign(g.names_.size(), {});
  g.in_.assign(g.names_.size(), {});
  for (const auto& [a, b] : pairs) {
    g.edges_.emplace_back(*g.find(a), *g.find(b));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  for (const auto& [u, v] : g.edges_) {
    g.out_[u].push_back(v);
    g.in_[v].push_back(u);
  }
  for (auto& s : g.in_) std::sort(s.begin(), s.end());
  return g;
}

// ---------------------------------------------------------------------------
// DisjointSet

DisjointSet::DisjointSet(std::size_t n) : parent_(n), rank_(n, 0) {
  std::iota(parent_.begin(), parent_.end(), NodeId{0});
}

NodeId DisjointSet::find(NodeId x) {
  NodeId root = x;
  while (parent_.at(root) != root) root = parent_[root];
  while (parent_[x] != root) {
    NodeId next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

bool DisjointSet::unite(NodeId a, NodeId b) {
  NodeId ra = find(a);
  NodeId rb = find(b);
  if (ra == rb) return false;
  if (rank_[ra] < rank_[rb]) std::swap(ra, rb);
  parent_[rb] = ra;
  if (rank_[ra] == rank_[rb]) ++rank_[ra];
  return true;
}

DisjointSet dsu_union_find(const ComparisonGraph& graph) {
  DisjointSet dsu(graph.node_count());
  for (const auto& [u, v] : graph.edges()) dsu.unite(u, v);
  return dsu;
}

// ---------------------------------------------------------------------------
// Cycles and paths

std::vector<std::vector<std::string>> detect_inconsistencies(const ComparisonGraph& graph) {
  std::size_t n_comp = 0;
  auto comp = strong_components(graph, &n_comp);
  std::vector<std::vector<std::string>> groups(n_comp);
  for (NodeId v = 0; v < graph.node_count(); ++v) groups[comp[v]].push_back(graph.name(v));
  std::vector<std::vector<std::string>> out;
  for (auto& g : groups) {
    if (g.size() < 2) continue;
    std::sort(g.begin(), g.end());
    out.push_back(std::move(g));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t count_directed_paths(const ComparisonGraph& graph, NodeId u, NodeId v,
                                   std::size_t max_len, std::uint64_t cap) {
  if (u >= graph.node_count() || v >= graph.node_count()) {
    throw std::out_of_range("count_directed_paths: node id out of range");
  }
  if (u == v || cap == 0) return 0;
  std::vector<char> allowed(graph.node_count(), 1);
  return count_layers(graph, u, max_len, cap, allowed).total[v];
}

// ---------------------------------------------------------------------------
// Mining

void MiningConfig::validate() const {
  if (min_path_len < 2) throw std::invalid_argument("mining: min_path_len must be >= 2");
  if (min_votes < 1) throw std::invalid_argument("mining: min_votes must be >= 1");
  if (max_path_len && *max_path_len < min_path_len) {
    throw std::invalid_argument("mining: max_path_len must be >= min_path_len");
  }
  if (path_count_cap < min_votes) {
    throw std::invalid_argument("mining: path_count_cap must be >= min_votes");
  }
}

MiningReport mine_pairs(const ComparisonGraph& graph, const MiningConfig& cfg,
                        const std::set<OrderedPair>& annotated) {
  cfg.validate();
  const std::size_t n = graph.node_count();
  MiningReport report;
  if (n == 0) return report;

  std::size_t n_comp = 0;
  const auto comp = strong_components(graph, &n_comp);
  std::vector<std::size_t> comp_size(n_comp, 0);
  for (NodeId v = 0; v < n; ++v) ++comp_size[comp[v]];
  std::vector<char> clean(n, 1);
  for (NodeId v = 0; v < n; ++v) clean[v] = comp_size[comp[v]] < 2 ? 1 : 0;
  report.quarantined = detect_inconsistencies(graph);

  DisjointSet dsu = dsu_union_find(graph);
  const std::size_t bound = cfg.max_path_len.value_or(n > 0 ? n - 1 : 0);

  std::vector<std::vector<char>> reach(n);
  for (NodeId u = 0; u < n; ++u) reach[u] = reachable_from(graph, u);

  for (NodeId u = 0; u < n; ++u) {
    PathLayers layers;
    std::vector<char> clean_reach;
    if (clean[u]) {
      layers = count_layers(graph, u, bound, cfg.path_count_cap, clean);
      clean_reach = reachable_from(graph, u, &clean);
    }
    for (NodeId v = 0; v < n; ++v) {
      if (u == v || !reach[u][v]) continue;
      OrderedPair key{graph.name(u), graph.name(v)};
      if (graph.has_edge(u, v) || annotated.count(key) != 0) continue;
      if (!clean[u] || !clean[v] || !clean_reach[v]) {
        report.skipped.push_back(std::move(key));
        continue;
      }
      if (layers.shortest[v] == kUnreached) continue;  // only longer than max_path_len
      if (!dsu.connected(u, v)) continue;
      if (reach[v][u]) {
        report.skipped.push_back(std::move(key));
        continue;
      }
      const std::size_t shortest = layers.shortest[v];
      const std::uint64_t votes = layers.total[v];
      if (shortest < cfg.min_path_len || votes < cfg.min_votes) continue;
      MinedPair p;
      p.weaker = graph.name(u);
      p.stronger = graph.name(v);
      p.attribute = graph.attribute();
      p.path_count = votes;
      p.shortest_path = shortest;
      p.confidence = cfg.confidence_rule == ConfidenceRule::kConstant
                         ? 1.0
                         : std::min(1.0, static_cast<double>(votes) /
                                             static_cast<double>(cfg.min_votes));
      report.pairs.push_back(std::move(p));
    }
  }
  // NodeIds follow name order, so pairs and skipped are already sorted.
  return report;
}

std::size_t AugmentStats::total_annotated() const {
  std::size_t s = 0;
  for (const auto& a : per_attribute) s += a.n_annotated;
  return s;
}

std::size_t AugmentStats::total_mined() const {
  std::size_t s = 0;
  for (const auto& a : per_attribute) s += a.n_mined;
  return s;
}

std::size_t AugmentStats::total_cycles() const {
  std::size_t s = 0;
  for (const auto& a : per_attribute) s += a.n_cycles;
  return s;
}

AugmentResult augment_all(const std::vector<corpus::ComparisonRecord>& records,
                          const corpus::AttributeVocab& vocab, const MiningConfig& cfg) {
  cfg.validate();
  const std::size_t k = vocab.size();
  std::vector<std::set<OrderedPair>> annotated(k);
  std::vector<std::size_t> counts(k, 0);
  for (const auto& r : records) {
    if (r.attribute >= k) throw std::out_of_range("augment_all: attribute index out of range");
    annotated[r.attribute].emplace(r.weaker, r.stronger);
    ++counts[r.attribute];
  }

  std::vector<std::future<MiningReport>> jobs;
  jobs.reserve(k);
  for (std::size_t a = 0; a < k; ++a) {
    jobs.push_back(std::async(std::launch::async, [&, a] {
      return mine_pairs(build_graph(records, a), cfg, annotated[a]);
    }));
  }

  AugmentResult result;
  result.records = records;
  for (std::size_t a = 0; a < k; ++a) {
    MiningReport rep = jobs[a].get();
    AttributeStats st;
    st.attribute = a;
    st.n_annotated = counts[a];
    st.n_mined = rep.pairs.size();
    st.n_cycles = rep.quarantined.size();
    st.n_skipped = rep.skipped.size();
    result.stats.per_attribute.push_back(st);
    for (const auto& p : rep.pairs) {
      result.records.push_back(corpus::ComparisonRecord{p.weaker, p.stronger, a,
                                                        corpus::Origin::kMined, p.confidence});
    }
  }
  return result;
}

std::string format_stats_text(const AugmentStats& stats, const corpus::AttributeVocab& vocab) {
  std::ostringstream os;
  std::size_t width = 9;
  for (const auto& n : vocab.names()) width = std::max(width, n.size());
  os << std::left << std::setw(static_cast<int>(width)) << "attribute" << std::right
     << std::setw(12) << "annotated" << std::setw(10) << "mined" << std::setw(10) << "after"
     << std::setw(9) << "cycles" << std::setw(10) << "skipped" << '\n';
  for (const auto& a : stats.per_attribute) {
    os << std::left << std::setw(static_cast<int>(width)) << vocab.name(a.attribute) << std::right
       << std::setw(12) << a.n_annotated << std::setw(10) << a.n_mined << std::setw(10)
       << a.n_annotated + a.n_mined << std::setw(9) << a.n_cycles << std::setw(10)
       << a.n_skipped << '\n';
  }
  os << std::left << std::setw(static_cast<int>(width)) << "total" << std::right << std::setw(12)
     << stats.total_annotated() << std::setw(10) << stats.total_mined() << std::setw(10)
     << stats.total_annotated() + stats.total_mined() << std::setw(9) << stats.total_cycles()
     << '\n';
  return os.str();
}

void write_stats_kv(const AugmentStats& stats, const corpus::AttributeVocab& vocab,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& a : stats.per_attribute) {
    out << "attribute=" << vocab.name(a.attribute) << " n_annotated=" << a.n_annotated
        << " n_mined=" << a.n_mined << " n_cycles=" << a.n_cycles << '\n';
  }
}

}  // namespace relattr::graph
