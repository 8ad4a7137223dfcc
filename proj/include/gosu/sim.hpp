#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <ostream>
#include <queue>
#include <utility>
#include <vector>

#include "gosu/dag.hpp"
#include "gosu/error.hpp"

namespace gosu {

struct ScheduleTrace {
  std::vector<Time> start_time;
  std::vector<Time> finish_time;
  Time makespan = 0;
};

/// Non-preemptive, work-conserving global fixed-priority list schedule on m
/// identical processors. Zero-WCET nodes complete at the instant they become
/// ready and never hold a processor.
inline ScheduleTrace simulate(const DagTask& task, const PriorityOrder& order, std::size_t m) {
  if (m < 1) throw Error(ErrorCode::kInvalidProcessorCount, "m must be >= 1");
  const std::size_t n = task.size();
  if (!order.is_permutation_of(n))
    throw Error(ErrorCode::kInvalidOrder, "order is not a permutation of the task's nodes");

  const std::vector<std::size_t> rank = order.ranks();
  std::vector<std::size_t> waiting(n);
  for (NodeId v = 0; v < n; ++v) waiting[v] = task.predecessors(v).size();

  ScheduleTrace trace;
  trace.start_time.assign(n, -1);
  trace.finish_time.assign(n, -1);

  // Ready queue keyed by rank, lowest rank (highest priority) first.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  using Running = std::pair<Time, NodeId>;
  std::priority_queue<Running, std::vector<Running>, std::greater<>> running;
  std::vector<NodeId> instant;  // zero-cost nodes awaiting resolution

  auto release = [&](NodeId v) {
    if (task.wcet(v) == 0)
      instant.push_back(v);
    else
      ready.push(rank[v]);
  };
  auto complete = [&](NodeId v) {
    for (NodeId w : task.successors(v))
      if (--waiting[w] == 0) release(w);
  };

  for (NodeId v = 0; v < n; ++v)
    if (waiting[v] == 0) release(v);

  std::size_t free = m;
  Time now = 0;
  std::size_t finished = 0;
  while (finished < n) {
    while (!running.empty() && running.top().first == now) {
      const NodeId v = running.top().second;
      running.pop();
      ++free;
      ++finished;
      complete(v);
    }
    while (!instant.empty()) {
      const NodeId v = instant.back();
      instant.pop_back();
      trace.start_time[v] = trace.finish_time[v] = now;
      ++finished;
      complete(v);
    }
    while (free > 0 && !ready.empty()) {
      const NodeId v = order[ready.top()];
      ready.pop();
      trace.start_time[v] = now;
      trace.finish_time[v] = now + task.wcet(v);
      running.emplace(trace.finish_time[v], v);
      --free;
    }
    if (finished == n) break;
    if (running.empty()) throw Error(ErrorCode::kInvalidGraph, "schedule stalled");
    now = running.top().first;
  }
  trace.makespan = *std::max_element(trace.finish_time.begin(), trace.finish_time.end());
  return trace;
}

inline Time makespan(const DagTask& task, const PriorityOrder& order, std::size_t m) {
  return simulate(task, order, m).makespan;
}

inline double slowdown(const DagTask& task, const PriorityOrder& order, std::size_t m) {
  return static_cast<double>(makespan(task, order, m)) /
         static_cast<double>(lower_bound(task, m));
}

inline double reward(const DagTask& task, const PriorityOrder& order, std::size_t m) {
  return -slowdown(task, order, m);
}

inline constexpr std::size_t kBruteForceMaxNodes = 9;

struct OptimalSchedule {
  PriorityOrder order;
  Time makespan = 0;
};

/// Exhaustive search over all n! priority orders; the lexicographically first
/// minimizer is returned.
inline OptimalSchedule brute_force_optimal(const DagTask& task, std::size_t m) {
  if (task.size() > kBruteForceMaxNodes)
    throw Error(ErrorCode::kTooLarge, "brute force is limited to 9 nodes");
  if (m < 1) throw Error(ErrorCode::kInvalidProcessorCount, "m must be >= 1");
  std::vector<NodeId> perm(task.size());
  std::iota(perm.begin(), perm.end(), NodeId{0});
  OptimalSchedule best{PriorityOrder(perm), makespan(task, PriorityOrder(perm), m)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const PriorityOrder candidate(perm);
    const Time ms = makespan(task, candidate, m);
    if (ms < best.makespan) best = {candidate, ms};
  }
  return best;
}

inline void write_trace_csv(std::ostream& out, const ScheduleTrace& trace) {
  out << "node,start,finish\n";
  for (std::size_t v = 0; v < trace.start_time.size(); ++v)
    out << v << ',' << trace.start_time[v] << ',' << trace.finish_time[v] << '\n';
}

}  // namespace gosu
