#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gosu/error.hpp"

namespace gosu {

using NodeId = std::size_t;
using Time = std::int64_t;
using Edge = std::pair<NodeId, NodeId>;

struct NodeRecord {
  Time wcet = 0;
  bool is_dummy = false;

  bool operator==(const NodeRecord&) const = default;
};

/// Unvalidated node/edge lists as read from a generator or a file.
struct RawGraph {
  std::vector<NodeRecord> nodes;
  std::vector<Edge> edges;
};

struct DerivedStats {
  Time total_workload = 0;     // W
  Time critical_workload = 0;  // L
  std::vector<NodeId> critical_path;
  std::vector<std::size_t> in_degrees;
  std::vector<std::size_t> out_degrees;
  std::vector<bool> is_critical;
  /// Longest path length from each node to the sink, the node's own WCET included.
  std::vector<Time> tail_length;
  /// Kahn order with lowest-index tie-break; position of each node in it.
  std::vector<NodeId> topological_order;
  std::vector<std::size_t> topological_rank;
};

/// Priority order: position t holds the node with the t-th highest priority.
class PriorityOrder {
 public:
  PriorityOrder() = default;
  explicit PriorityOrder(std::vector<NodeId> perm) : perm_(std::move(perm)) {}

  std::size_t size() const noexcept { return perm_.size(); }
  NodeId operator[](std::size_t position) const { return perm_[position]; }
  const std::vector<NodeId>& perm() const noexcept { return perm_; }
  auto begin() const noexcept { return perm_.begin(); }
  auto end() const noexcept { return perm_.end(); }

  /// rank[v] = position of node v (0 = highest priority).
  std::vector<std::size_t> ranks() const {
    std::vector<std::size_t> r(perm_.size());
    for (std::size_t t = 0; t < perm_.size(); ++t) r[perm_[t]] = t;
    return r;
  }

  bool is_permutation_of(std::size_t n) const {
    if (perm_.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (NodeId v : perm_) {
      if (v >= n || seen[v]) return false;
      seen[v] = true;
    }
    return true;
  }

  bool operator==(const PriorityOrder&) const = default;

 private:
  std::vector<NodeId> perm_;
};

inline constexpr std::size_t kRawFeatureWidth = 8;

/// Row-major n x kRawFeatureWidth node feature table.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * kRawFeatureWidth, kRawFeatureWidth};
  }
  double at(std::size_t i, std::size_t j) const { return values[i * kRawFeatureWidth + j]; }
};

class DagTask;
DagTask normalize(const RawGraph& raw);

/// Immutable DAG task with a single source and sink. Only constructible
/// through normalize(), so every instance satisfies the graph invariants.
class DagTask {
 public:
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<NodeRecord>& nodes() const noexcept { return nodes_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  Time wcet(NodeId v) const { return nodes_[v].wcet; }
  NodeId source() const noexcept { return source_; }
  NodeId sink() const noexcept { return sink_; }
  const std::vector<NodeId>& predecessors(NodeId v) const { return preds_[v]; }
  const std::vector<NodeId>& successors(NodeId v) const { return succs_[v]; }
  const DerivedStats& stats() const noexcept { return stats_; }

  RawGraph raw() const { return RawGraph{nodes_, edges_}; }

  bool operator==(const DagTask& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  friend DagTask normalize(const RawGraph& raw);
  DagTask() = default;

  std::vector<NodeRecord> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> preds_;
  std::vector<std::vector<NodeId>> succs_;
  NodeId source_ = 0;
  NodeId sink_ = 0;
  DerivedStats stats_;
};

namespace detail {

inline DerivedStats compute_stats(const std::vector<NodeRecord>& nodes,
                                  const std::vector<std::vector<NodeId>>& preds,
                                  const std::vector<std::vector<NodeId>>& succs,
                                  const std::vector<NodeId>& topo, NodeId source) {
  const std::size_t n = nodes.size();
  DerivedStats s;
  s.topological_order = topo;
  s.topological_rank.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) s.topological_rank[topo[i]] = i;
  s.in_degrees.resize(n);
  s.out_degrees.resize(n);
  for (NodeId v = 0; v < n; ++v) {
    s.in_degrees[v] = preds[v].size();
    s.out_degrees[v] = succs[v].size();
    s.total_workload += nodes[v].wcet;
  }

  s.tail_length.assign(n, 0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Time best = 0;
    for (NodeId w : succs[*it]) best = std::max(best, s.tail_length[w]);
    s.tail_length[*it] = nodes[*it].wcet + best;
  }
  s.critical_workload = s.tail_length[source];

  // A node is critical when some longest complete path passes through it.
  std::vector<Time> head(n, 0);
  for (NodeId u : topo) {
    Time best = 0;
    for (NodeId w : preds[u]) best = std::max(best, head[w]);
    head[u] = nodes[u].wcet + best;
  }
  s.is_critical.assign(n, false);
  for (NodeId u = 0; u < n; ++u)
    s.is_critical[u] = head[u] + s.tail_length[u] - nodes[u].wcet == s.critical_workload;

  // Greedy smallest-index continuation yields the lexicographically smallest
  // critical path because every critical path starts at the source.
  NodeId v = source;
  Time remaining = s.critical_workload;
  while (true) {
    s.critical_path.push_back(v);
    remaining -= nodes[v].wcet;
    if (succs[v].empty()) break;
    NodeId next = n;
    for (NodeId w : succs[v]) {
      if (s.tail_length[w] == remaining && w < next) next = w;
    }
    v = next;
  }
  return s;
}

}  // namespace detail

/// Validates a raw graph and inserts a dummy source and/or sink (WCET 0,
/// appended after the original nodes) when there are several of either.
inline DagTask normalize(const RawGraph& raw) {
  if (raw.nodes.empty()) throw Error(ErrorCode::kEmptyGraph, "graph has no nodes");
  std::vector<NodeRecord> nodes = raw.nodes;
  std::vector<Edge> edges = raw.edges;
  const std::size_t n0 = nodes.size();

  bool any_real = false;
  for (const NodeRecord& r : nodes) {
    if (r.wcet < 0) throw Error(ErrorCode::kInvalidGraph, "negative wcet");
    if ((r.wcet == 0) != r.is_dummy)
      throw Error(ErrorCode::kInvalidGraph, "wcet must be 0 exactly for dummy nodes");
    any_real = any_real || !r.is_dummy;
  }
  if (!any_real) throw Error(ErrorCode::kInvalidGraph, "graph has only dummy nodes");

  std::set<Edge> seen;
  for (const Edge& e : edges) {
    if (e.first >= n0 || e.second >= n0)
      throw Error(ErrorCode::kInvalidGraph, "edge endpoint out of range");
    if (e.first == e.second) throw Error(ErrorCode::kCycleDetected, "self-loop");
    if (!seen.insert(e).second) throw Error(ErrorCode::kInvalidGraph, "duplicate edge");
  }

  auto build_adjacency = [](std::size_t n, const std::vector<Edge>& es) {
    std::pair<std::vector<std::vector<NodeId>>, std::vector<std::vector<NodeId>>> adj;
    adj.first.resize(n);
    adj.second.resize(n);
    for (const Edge& e : es) {
      adj.first[e.second].push_back(e.first);
      adj.second[e.first].push_back(e.second);
    }
    return adj;
  };

  auto [preds, succs] = build_adjacency(n0, edges);
  std::vector<NodeId> sources, sinks;
  for (NodeId v = 0; v < n0; ++v) {
    if (preds[v].empty()) sources.push_back(v);
    if (succs[v].empty()) sinks.push_back(v);
  }
  if (sources.empty() || sinks.empty())
    throw Error(ErrorCode::kCycleDetected, "no source or no sink");

  NodeId source = sources.front();
  NodeId sink = sinks.front();
  if (sources.size() > 1) {
    source = nodes.size();
    nodes.push_back({0, true});
    for (NodeId s : sources) edges.emplace_back(source, s);
  }
  if (sinks.size() > 1) {
    sink = nodes.size();
    nodes.push_back({0, true});
    for (NodeId t : sinks) edges.emplace_back(t, sink);
  }
  const std::size_t n = nodes.size();
  if (n != n0) std::tie(preds, succs) = build_adjacency(n, edges);

  // Kahn with a min-heap on node index.
  std::vector<std::size_t> indeg(n);
  for (NodeId v = 0; v < n; ++v) indeg[v] = preds[v].size();
  std::set<NodeId> ready;
  for (NodeId v = 0; v < n; ++v)
    if (indeg[v] == 0) ready.insert(v);
  std::vector<NodeId> topo;
  topo.reserve(n);
  while (!ready.empty()) {
    const NodeId v = *ready.begin();
    ready.erase(ready.begin());
    topo.push_back(v);
    for (NodeId w : succs[v])
      if (--indeg[w] == 0) ready.insert(w);
  }
  if (topo.size() != n) throw Error(ErrorCode::kCycleDetected, "graph contains a cycle");

  DagTask task;
  task.nodes_ = std::move(nodes);
  task.edges_ = std::move(edges);
  task.preds_ = std::move(preds);
  task.succs_ = std::move(succs);
  task.source_ = source;
  task.sink_ = sink;
  task.stats_ = detail::compute_stats(task.nodes_, task.preds_, task.succs_, topo, source);
  return task;
}

inline const DerivedStats& derive_stats(const DagTask& task) { return task.stats(); }

/// L + max(0, ceil((W - L*m) / m)).
inline Time lower_bound_from(Time L, Time W, std::size_t m) {
  if (m < 1) throw Error(ErrorCode::kInvalidProcessorCount, "m must be >= 1");
  const Time mm = static_cast<Time>(m);
  const Time excess = W - L * mm;
  if (excess <= 0) return L;
  return L + (excess + mm - 1) / mm;
}

inline Time lower_bound(const DagTask& task, std::size_t m) {
  return lower_bound_from(task.stats().critical_workload, task.stats().total_workload, m);
}

inline FeatureMatrix raw_features(const DagTask& task) {
  const DerivedStats& s = task.stats();
  const double W = static_cast<double>(s.total_workload);
  const double L = static_cast<double>(s.critical_workload);
  FeatureMatrix f;
  f.rows = task.size();
  f.values.reserve(f.rows * kRawFeatureWidth);
  for (NodeId v = 0; v < task.size(); ++v) {
    const double c = static_cast<double>(task.wcet(v));
    const bool endpoint = v == task.source() || v == task.sink();
    const std::array<double, kRawFeatureWidth> x = {
        c / W,
        std::log1p(c),
        static_cast<double>(s.in_degrees[v]),
        static_cast<double>(s.out_degrees[v]),
        endpoint ? 1.0 : 0.0,
        s.is_critical[v] ? 1.0 : 0.0,
        L / W,
        (W - L) / W,
    };
    f.values.insert(f.values.end(), x.begin(), x.end());
  }
  return f;
}

// ---------------------------------------------------------------------------
// Line-record serialization: {"nodes":[{"wcet":..,"is_dummy":..}],"edges":[[p,s]]}
// ---------------------------------------------------------------------------

inline std::string to_json_line(const DagTask& task) {
  nlohmann::ordered_json j;
  auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
  for (const NodeRecord& r : task.nodes()) {
    nlohmann::ordered_json node;
    node["wcet"] = r.wcet;
    node["is_dummy"] = r.is_dummy;
    nodes.push_back(std::move(node));
  }
  auto& edges = j["edges"] = nlohmann::ordered_json::array();
  for (const Edge& e : task.edges()) edges.push_back({e.first, e.second});
  return j.dump();
}

inline DagTask from_json_line(const std::string& line) {
  RawGraph raw;
  try {
    const auto j = nlohmann::json::parse(line);
    for (const auto& node : j.at("nodes"))
      raw.nodes.push_back({node.at("wcet").get<Time>(), node.at("is_dummy").get<bool>()});
    for (const auto& e : j.at("edges")) {
      if (e.size() != 2) throw Error(ErrorCode::kParseError, "edge must have two endpoints");
      raw.edges.emplace_back(e.at(0).get<NodeId>(), e.at(1).get<NodeId>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, ex.what());
  }
  return normalize(raw);
}

}  // namespace gosu
