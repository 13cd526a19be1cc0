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

#ifndef RELATTR_GRAPH_AUGMENT_HPP_
#define RELATTR_GRAPH_AUGMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "relattr/corpus.hpp"

// Transitive pair mining over per-attribute comparison graphs.
//
// Every record "b stronger than a on attribute v" becomes an edge a -> b in
// the graph of v. Nodes in a strongly connected component of size >= 2 are
// inconsistent annotations and are quarantined. On the remaining DAG, an
// unannotated pair (u, v) is mined when a directed path u -> v exists whose
// shortest length is at least `min_path_len`, at least `min_votes` distinct
// paths of length <= `max_path_len` support it, and v cannot reach u.
namespace relattr::graph {

using NodeId = std::size_t;
using OrderedPair = std::pair<std::string, std::string>;  // (weaker, stronger)

class ComparisonGraph {
 public:
  ComparisonGraph() = default;

  std::size_t attribute() const { return attribute_; }
  std::size_t node_count() const { return names_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  // Node names in ascending order; NodeId indexes this list.
  const std::vector<std::string>& nodes() const { return names_; }
  const std::string& name(NodeId id) const { return names_.at(id); }
  std::optional<NodeId> find(const std::string& name) const;
  // Sorted (from, to) edge list.
  const std::vector<std::pair<NodeId, NodeId>>& edges() const { return edges_; }
  const std::vector<NodeId>& successors(NodeId u) const { return out_.at(u); }
  const std::vector<NodeId>& predecessors(NodeId u) const { return in_.at(u); }
  bool has_edge(NodeId u, NodeId v) const;
  // Records dropped while building (self comparisons).
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

  // Builds a graph from explicit names and edges; used by tests and tools.
  static ComparisonGraph from_edges(
      std::size_t attribute, const std::vector<std::pair<std::string, std::string>>& edges,
      const std::vector<std::string>& extra_nodes = {});

 private:
  friend ComparisonGraph build_graph(const std::vector<corpus::ComparisonRecord>&, std::size_t);

  std::size_t attribute_ = 0;
  std::vector<std::string> names_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::vector<NodeId>> out_;
  std::vector<std::vector<NodeId>> in_;
  std::vector<std::string> diagnostics_;
};

// Uses only records of `attribute`; duplicates collapse. Records with
// weaker == stronger are dropped with a diagnostic.
ComparisonGraph build_graph(const std::vector<corpus::ComparisonRecord>& records,
                            std::size_t attribute);

// Union-find with union by rank and path compression.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n = 0);

  std::size_t size() const { return parent_.size(); }
  NodeId find(NodeId x);
  // Returns false when already joined.
  bool unite(NodeId a, NodeId b);
  bool connected(NodeId a, NodeId b) { return find(a) == find(b); }

 private:
  std::vector<NodeId> parent_;
  std::vector<std::uint32_t> rank_;
};

// Connectivity of `graph` ignoring edge direction.
DisjointSet dsu_union_find(const ComparisonGraph& graph);

// Strongly connected components of size >= 2, each as sorted node names,
// the list sorted. Empty iff the graph is a DAG.
std::vector<std::vector<std::string>> detect_inconsistencies(const ComparisonGraph& graph);

// Number of distinct directed paths u -> v with at most `max_len` edges,
// saturating at `cap`. Requires the graph to be acyclic on the paths
// considered; with cycles the count is over walks.
std::uint64_t count_directed_paths(const ComparisonGraph& graph, NodeId u, NodeId v,
                                   std::size_t max_len, std::uint64_t cap);

enum class ConfidenceRule { kVoteFraction, kConstant };

struct MiningConfig {
  std::size_t min_path_len = 2;
  std::size_t min_votes = 2;
  // nullopt: no bound (paths are bounded by the node count).
  std::optional<std::size_t> max_path_len = 6;
  ConfidenceRule confidence_rule = ConfidenceRule::kVoteFraction;
  // Saturation point of per-pair path counting.
  std::uint64_t path_count_cap = 1u << 20;

  // Throws std::invalid_argument on violated invariants.
  void validate() const;
};

struct MinedPair {
  std::string weaker;
  std::string stronger;
  std::size_t attribute = 0;
  std::uint64_t path_count = 0;
  std::size_t shortest_path = 0;
  double confidence = 0.0;

  friend bool operator==(const MinedPair&, const MinedPair&) = default;
};

struct MiningReport {
  std::vector<MinedPair> pairs;  // sorted by (weaker, stronger)
  std::vector<std::vector<std::string>> quarantined;  // inconsistent SCCs
  // Reachable unannotated pairs not mined because the only support runs
  // through, or touches, a quarantined component.
  std::vector<OrderedPair> skipped;
};

MiningReport mine_pairs(const ComparisonGraph& graph, const MiningConfig& cfg,
                        const std::set<OrderedPair>& annotated);

struct AttributeStats {
  std::size_t attribute = 0;
  std::size_t n_annotated = 0;
  std::size_t n_mined = 0;
  std::size_t n_cycles = 0;
  std::size_t n_skipped = 0;
};

struct AugmentStats {
  std::vector<AttributeStats> per_attribute;  // one entry per vocab index
  std::size_t total_annotated() const;
  std::size_t total_mined() const;
  std::size_t total_cycles() const;
};

struct AugmentResult {
  // Input records (original order) followed by mined records sorted by
  // (attribute, weaker, stronger).
  std::vector<corpus::ComparisonRecord> records;
  AugmentStats stats;
};

// Mines every attribute independently (one worker per attribute).
AugmentResult augment_all(const std::vector<corpus::ComparisonRecord>& records,
                          const corpus::AttributeVocab& vocab, const MiningConfig& cfg);

// Human-readable table and `attribute,n_annotated,n_mined,n_cycles` lines.
std::string format_stats_text(const AugmentStats& stats, const corpus::AttributeVocab& vocab);
void write_stats_kv(const AugmentStats& stats, const corpus::AttributeVocab& vocab,
                    const std::filesystem::path& path);

}  // namespace relattr::graph

#endif  // RELATTR_GRAPH_AUGMENT_HPP_
