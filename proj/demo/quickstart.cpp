// Builds a small task by hand, generates one from a preset, and compares
// heuristic and untrained-policy priority orders on four processors.

#include <iostream>

#include "gosu/heuristics.hpp"
#include "gosu/policy.hpp"
#include "gosu/sim.hpp"
#include "gosu/taskgen.hpp"

int main() {
  using namespace gosu;

  // Two parallel branches between a source and a sink.
  RawGraph raw;
  raw.nodes = {{2, false}, {4, false}, {6, false}, {1, false}};
  raw.edges = {{0, 1}, {0, 2}, {1, 3}, {2, 3}};
  const DagTask diamond = normalize(raw);
  const DerivedStats& s = diamond.stats();
  std::cout << "diamond: W=" << s.total_workload << " L=" << s.critical_workload
            << " LB(m=2)=" << lower_bound(diamond, 2)
            << " makespan(topological, m=2)=" << makespan(diamond, PriorityOrder(s.topological_order), 2)
            << '\n';

  // Draw until the generator forks enough to make the comparison interesting.
  DagTask task = diamond;
  for (std::uint64_t i = 0; task.size() < 12; ++i) {
    Rng rng = make_rng(7, {i});
    task = generate_task(preset("moderate"), rng);
  }
  std::cout << "generated: n=" << task.size() << " W=" << task.stats().total_workload
            << " L=" << task.stats().critical_workload << '\n';

  const std::size_t m = 4;
  for (HeuristicKind k : {HeuristicKind::kTopological, HeuristicKind::kCriticalPathFirst,
                          HeuristicKind::kLongestTailFirst}) {
    std::cout << "  " << to_string(k) << ": slowdown " << slowdown(task, heuristic_order(task, k), m) << '\n';
  }
  Rng order_rng = make_rng(7, {1});
  std::cout << "  random: slowdown " << slowdown(task, random_order(task.size(), order_rng), m) << '\n';

  EncoderConfig cfg;
  cfg.dim = 32;
  const Policy policy(cfg, 7);
  std::cout << "  untrained policy (greedy): slowdown " << slowdown(task, policy.greedy_order(task), m) << '\n';
  return 0;
}
