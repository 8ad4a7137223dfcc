#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "gosu/dag.hpp"
#include "gosu/error.hpp"
#include "gosu/rng.hpp"

namespace gosu {

enum class HeuristicKind { kRandom, kTopological, kCriticalPathFirst, kLongestTailFirst };

inline constexpr std::string_view to_string(HeuristicKind k) {
  switch (k) {
    case HeuristicKind::kRandom: return "random";
    case HeuristicKind::kTopological: return "topological";
    case HeuristicKind::kCriticalPathFirst: return "critical_path_first";
    case HeuristicKind::kLongestTailFirst: return "longest_tail_first";
  }
  return "random";
}

inline std::optional<HeuristicKind> heuristic_from_string(std::string_view s) {
  for (HeuristicKind k : {HeuristicKind::kRandom, HeuristicKind::kTopological,
                          HeuristicKind::kCriticalPathFirst, HeuristicKind::kLongestTailFirst})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline PriorityOrder random_order(std::size_t n, Rng& rng) {
  std::vector<NodeId> perm(n);
  std::iota(perm.begin(), perm.end(), NodeId{0});
  // Fisher-Yates on raw engine bits; std::shuffle is not portable across libraries.
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  return PriorityOrder(std::move(perm));
}

/// Descending longest-path-to-sink; ties go to the earlier topological position
/// so zero-cost dummies never outrank their successors.
inline PriorityOrder longest_tail_first(const DagTask& task) {
  const DerivedStats& s = task.stats();
  std::vector<NodeId> perm = s.topological_order;
  std::stable_sort(perm.begin(), perm.end(), [&](NodeId a, NodeId b) {
    return s.tail_length[a] > s.tail_length[b];
  });
  return PriorityOrder(std::move(perm));
}

/// Topological list order that always takes an available critical-path node
/// first, then the available node with the longest tail (lowest index on ties).
inline PriorityOrder critical_path_first(const DagTask& task) {
  const DerivedStats& s = task.stats();
  const std::size_t n = task.size();
  auto better = [&](NodeId a, NodeId b) {
    if (s.is_critical[a] != s.is_critical[b]) return s.is_critical[a];
    if (s.tail_length[a] != s.tail_length[b]) return s.tail_length[a] > s.tail_length[b];
    return a < b;
  };
  std::set<NodeId, decltype(better)> available(better);
  std::vector<std::size_t> waiting(n);
  for (NodeId v = 0; v < n; ++v)
    if ((waiting[v] = task.predecessors(v).size()) == 0) available.insert(v);
  std::vector<NodeId> perm;
  perm.reserve(n);
  while (!available.empty()) {
    const NodeId v = *available.begin();
    available.erase(available.begin());
    perm.push_back(v);
    for (NodeId w : task.successors(v))
      if (--waiting[w] == 0) available.insert(w);
  }
  return PriorityOrder(std::move(perm));
}

inline PriorityOrder heuristic_order(const DagTask& task, HeuristicKind kind, Rng* rng = nullptr) {
  switch (kind) {
    case HeuristicKind::kRandom: {
      if (!rng) throw Error(ErrorCode::kInvalidParams, "random order needs an rng");
      return random_order(task.size(), *rng);
    }
    case HeuristicKind::kTopological: return PriorityOrder(task.stats().topological_order);
    case HeuristicKind::kCriticalPathFirst: return critical_path_first(task);
    case HeuristicKind::kLongestTailFirst: return longest_tail_first(task);
  }
  return PriorityOrder(task.stats().topological_order);
}

/// Every predecessor ranked above each of its successors.
inline bool respects_precedence(const DagTask& task, const PriorityOrder& order) {
  const auto rank = order.ranks();
  for (const Edge& e : task.edges())
    if (rank[e.first] > rank[e.second]) return false;
  return true;
}

}  // namespace gosu
