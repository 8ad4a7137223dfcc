#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "gosu/dag.hpp"
#include "gosu/error.hpp"
#include "gosu/heuristics.hpp"
#include "gosu/policy.hpp"
#include "gosu/rng.hpp"
#include "gosu/sim.hpp"
#include "gosu/train.hpp"

namespace gosu {

inline constexpr std::uint64_t kRandomPolicyStream = 0x7a4d;

/// A named priority-assignment policy: a heuristic or a learned checkpoint
/// (spelled "gosu:<path>").
class PolicySpec {
 public:
  static PolicySpec parse(std::string_view text) {
    PolicySpec s;
    s.name_ = std::string(text);
    if (text.starts_with("gosu:")) {
      const std::filesystem::path path(std::string(text.substr(5)));
      s.learned_ = std::make_shared<Policy>(load_checkpoint(path));
      return s;
    }
    const auto kind = heuristic_from_string(text);
    if (!kind) throw Error(ErrorCode::kInvalidParams, "unknown policy '" + std::string(text) + "'");
    s.kind_ = *kind;
    return s;
  }

  static PolicySpec learned(std::string name, Policy policy) {
    PolicySpec s;
    s.name_ = std::move(name);
    s.learned_ = std::make_shared<Policy>(std::move(policy));
    return s;
  }

  const std::string& name() const noexcept { return name_; }
  bool is_learned() const noexcept { return learned_ != nullptr; }

  /// Order for the task at `index`; random draws from a stream keyed by (seed, index).
  PriorityOrder order(const DagTask& task, std::size_t index, std::uint64_t seed) const {
    if (learned_) return learned_->greedy_order(task);
    if (kind_ == HeuristicKind::kRandom) {
      Rng rng = make_rng(seed, {kRandomPolicyStream, index});
      return random_order(task.size(), rng);
    }
    return heuristic_order(task, kind_);
  }

 private:
  std::string name_;
  HeuristicKind kind_ = HeuristicKind::kRandom;
  std::shared_ptr<const Policy> learned_;
};

struct ExperimentConfig {
  std::vector<std::size_t> processors{2, 3, 4, 6, 8};
  std::vector<std::string> policies;
  double margin = 0.01;
  std::uint64_t seed = 0;
};

inline void validate(const ExperimentConfig& c) {
  for (std::size_t m : c.processors)
    if (m < 1) throw Error(ErrorCode::kInvalidProcessorCount, "m must be >= 1");
  if (!(c.margin >= 0.0)) throw Error(ErrorCode::kInvalidParams, "margin must be >= 0");
}

struct SlowdownRow {
  std::string policy;
  std::size_t m = 0;
  double mean_slowdown = 0.0;
  std::size_t tasks = 0;
};

struct PairRow {
  std::string policy_a;
  std::string policy_b;
  std::size_t m = 0;
  std::size_t wins = 0, ties = 0, losses = 0;
};

struct EvaluationResult {
  std::vector<SlowdownRow> slowdowns;
  std::vector<PairRow> pairs;
};

enum class Outcome { kWin, kTie, kLoss };

/// A beats B when M_B > M_A and M_B / M_A >= 1 + margin.
inline Outcome compare_makespans(Time a, Time b, double margin) {
  const double da = static_cast<double>(a), db = static_cast<double>(b);
  if (b > a && db >= (1.0 + margin) * da) return Outcome::kWin;
  if (a > b && da >= (1.0 + margin) * db) return Outcome::kLoss;
  return Outcome::kTie;
}

inline EvaluationResult evaluate(const std::vector<DagTask>& tasks, const std::vector<PolicySpec>& policies,
                                 const ExperimentConfig& cfg) {
  validate(cfg);
  if (tasks.empty()) throw Error(ErrorCode::kMissingArtifact, "no tasks to evaluate");
  // Orders do not depend on m, so compute them once.
  std::vector<std::vector<PriorityOrder>> orders(policies.size());
  for (std::size_t p = 0; p < policies.size(); ++p)
    for (std::size_t i = 0; i < tasks.size(); ++i) orders[p].push_back(policies[p].order(tasks[i], i, cfg.seed));

  EvaluationResult out;
  for (std::size_t m : cfg.processors) {
    std::vector<std::vector<Time>> ms(policies.size(), std::vector<Time>(tasks.size()));
    std::vector<Time> lb(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) lb[i] = lower_bound(tasks[i], m);
    for (std::size_t p = 0; p < policies.size(); ++p) {
      double sum = 0.0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        ms[p][i] = makespan(tasks[i], orders[p][i], m);
        sum += static_cast<double>(ms[p][i]) / static_cast<double>(lb[i]);
      }
      out.slowdowns.push_back({policies[p].name(), m, sum / static_cast<double>(tasks.size()), tasks.size()});
    }
    for (std::size_t a = 0; a < policies.size(); ++a)
      for (std::size_t b = a + 1; b < policies.size(); ++b) {
        PairRow row{policies[a].name(), policies[b].name(), m};
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          switch (compare_makespans(ms[a][i], ms[b][i], cfg.margin)) {
            case Outcome::kWin: ++row.wins; break;
            case Outcome::kTie: ++row.ties; break;
            case Outcome::kLoss: ++row.losses; break;
          }
        }
        out.pairs.push_back(row);
      }
  }
  return out;
}

/// Single "# key=value ..." provenance line that opens every CSV.
inline void write_csv_header_comment(std::ostream& out, std::string_view command,
                                     const std::vector<std::pair<std::string, std::string>>& fields) {
  out << "# gosu " << command;
  for (const auto& [k, v] : fields) out << ' ' << k << '=' << v;
  out << '\n';
}

inline void write_slowdown_csv(std::ostream& out, const std::vector<SlowdownRow>& rows) {
  out << "policy,m,mean_slowdown,tasks\n";
  out.precision(10);
  for (const SlowdownRow& r : rows) out << r.policy << ',' << r.m << ',' << r.mean_slowdown << ',' << r.tasks << '\n';
}

inline void write_pairs_csv(std::ostream& out, const std::vector<PairRow>& rows) {
  out << "policy_a,policy_b,m,wins,ties,losses\n";
  for (const PairRow& r : rows)
    out << r.policy_a << ',' << r.policy_b << ',' << r.m << ',' << r.wins << ',' << r.ties << ',' << r.losses << '\n';
}

inline double mean_policy_slowdown(const std::vector<DagTask>& tasks, const PolicySpec& policy, std::size_t m,
                                   std::uint64_t seed) {
  double s = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) s += slowdown(tasks[i], policy.order(tasks[i], i, seed), m);
  return tasks.empty() ? 0.0 : s / static_cast<double>(tasks.size());
}

struct AblationRow {
  PathMode mode = PathMode::kBoth;
  std::uint64_t config_hash = 0;
  double test_mean_slowdown = 0.0;
  std::size_t refreshes = 0;
  Policy policy;
};

/// Trains one model per path mode from identical seeds and settings, then
/// reports greedy mean slowdown on the test split.
inline std::vector<AblationRow> ablate(const DatasetSplit& data, const TrainConfig& base, std::size_t m,
                                       const std::vector<PathMode>& modes = {PathMode::kForward, PathMode::kInverse,
                                                                              PathMode::kBoth}) {
  std::vector<AblationRow> rows;
  for (PathMode mode : modes) {
    TrainConfig cfg = base;
    cfg.encoder.path_mode = mode;
    TrainResult r = train(data, cfg, m);
    const PolicySpec spec = PolicySpec::learned(std::string(to_string(mode)), r.policy);
    rows.push_back({mode, config_hash(cfg.encoder), mean_policy_slowdown(data.test, spec, m, cfg.seed),
                    r.refreshes, std::move(r.policy)});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "path_mode,config_hash,test_mean_slowdown,refreshes\n";
  out.precision(10);
  for (const AblationRow& r : rows)
    out << to_string(r.mode) << ',' << r.config_hash << ',' << r.test_mean_slowdown << ',' << r.refreshes << '\n';
}

}  // namespace gosu
