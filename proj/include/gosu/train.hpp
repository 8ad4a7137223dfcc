#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "gosu/dag.hpp"
#include "gosu/diff/param_store.hpp"
#include "gosu/error.hpp"
#include "gosu/policy.hpp"
#include "gosu/rng.hpp"
#include "gosu/sim.hpp"
#include "gosu/taskgen.hpp"

namespace gosu {

struct TrainConfig {
  EncoderConfig encoder;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  diff::AdamConfig adam;  // lr 1e-4, clip (-1, 1)
  double t_test_alpha = 0.01;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  validate(c.encoder);
  if (c.batch_size < 1) throw Error(ErrorCode::kInvalidParams, "batch size must be >= 1");
  if (!(c.t_test_alpha > 0.0 && c.t_test_alpha < 1.0))
    throw Error(ErrorCode::kInvalidParams, "t-test alpha must be in (0, 1)");
}

struct TTestResult {
  double t_stat = 0.0;
  double p_value = 1.0;
  bool target_better = false;
};

/// One-sided paired t-test of H1: mean(baseline - target) > 0.
inline TTestResult paired_t_test(std::span<const double> target, std::span<const double> baseline,
                                 double alpha = 0.01) {
  if (target.size() != baseline.size())
    throw Error(ErrorCode::kLengthMismatch, "paired samples differ in length");
  const std::size_t n = target.size();
  if (n < 2) throw Error(ErrorCode::kLengthMismatch, "paired t-test needs at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = baseline[i] - target[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return r;
  if (sd == 0.0) {
    r.t_stat = mean > 0 ? std::numeric_limits<double>::infinity()
                        : -std::numeric_limits<double>::infinity();
    r.p_value = mean > 0 ? 0.0 : 1.0;
  } else {
    r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.t_stat));
  }
  r.target_better = r.p_value < alpha;
  return r;
}

/// (M(b) - M(pi)) / M_LB: positive when the sampled order beats the baseline.
inline double advantage(Time baseline_makespan, Time sampled_makespan, Time lower) {
  return static_cast<double>(baseline_makespan - sampled_makespan) / static_cast<double>(lower);
}

struct BatchResult {
  diff::Gradients gradients;  // descent direction of -J
  double mean_sampled_slowdown = 0.0;
  double mean_baseline_slowdown = 0.0;
  double mean_advantage = 0.0;
};

/// REINFORCE with a greedy-rollout baseline. For each task a stochastic order
/// is sampled from `target` (dropout active), the baseline decodes greedily,
/// and (1/|B|) * A * grad log p(pi) is accumulated as an ascent direction; the
/// returned gradients are its negation so they can feed a descent optimizer.
/// `seeds[i]` drives the sampling stream of task i.
inline BatchResult batch_gradient(std::span<const DagTask* const> batch, const Policy& target,
                                  const Policy& baseline, std::size_t m,
                                  std::span<const std::uint64_t> seeds) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidParams, "empty batch");
  if (seeds.size() != batch.size()) throw Error(ErrorCode::kLengthMismatch, "one seed per task");
  BatchResult out;
  out.gradients = target.params().zero_gradients();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const DagTask& task = *batch[i];
    Rng rng(seeds[i]);
    diff::Tape tape;
    const auto run = target.run(tape, task, DecodeMode::kSample, &rng, true, true);
    const PriorityOrder base_order = baseline.greedy_order(task);
    const Time lb = lower_bound(task, m);
    const Time m_pi = makespan(task, run.decode.order, m);
    const Time m_b = makespan(task, base_order, m);
    const double a = advantage(m_b, m_pi, lb);
    out.mean_sampled_slowdown += inv_b * static_cast<double>(m_pi) / static_cast<double>(lb);
    out.mean_baseline_slowdown += inv_b * static_cast<double>(m_b) / static_cast<double>(lb);
    out.mean_advantage += inv_b * a;
    if (a == 0.0) continue;
    tape.backward(run.decode.log_prob);
    diff::accumulate(tape, out.gradients, -a * inv_b);
  }
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_mean_slowdown = 0.0;
  double val_target_slowdown = 0.0;
  double val_baseline_slowdown = 0.0;
  double t_stat = 0.0;
  bool refreshed = false;
};

inline std::vector<double> greedy_makespans(const Policy& policy, const std::vector<DagTask>& tasks,
                                            std::size_t m) {
  std::vector<double> out;
  out.reserve(tasks.size());
  for (const DagTask& t : tasks)
    out.push_back(static_cast<double>(makespan(t, policy.greedy_order(t), m)));
  return out;
}

inline double mean_slowdown(const std::vector<DagTask>& tasks, const std::vector<double>& makespans,
                            std::size_t m) {
  double s = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    s += makespans[i] / static_cast<double>(lower_bound(tasks[i], m));
  return tasks.empty() ? 0.0 : s / static_cast<double>(tasks.size());
}

/// Target/baseline pair trained with REINFORCE; the baseline is refreshed
/// from the target whenever the target's greedy makespans on the validation
/// split are significantly lower.
class Trainer {
 public:
  Trainer(const TrainConfig& config, std::size_t m)
      : config_(config), m_(m), target_(config.encoder, config.seed), baseline_(target_) {
    validate(config_);
    if (m_ < 1) throw Error(ErrorCode::kInvalidProcessorCount, "m must be >= 1");
  }

  const Policy& target() const noexcept { return target_; }
  const Policy& baseline() const noexcept { return baseline_; }
  const std::vector<EpochLog>& log() const noexcept { return log_; }
  std::size_t refresh_count() const noexcept { return refreshes_; }

  /// One optimizer update on `batch`; returns the batch statistics.
  BatchResult update(std::span<const DagTask* const> batch, std::span<const std::uint64_t> seeds) {
    BatchResult r = batch_gradient(batch, target_, baseline_, m_, seeds);
    diff::adam_step(target_.params(), r.gradients, config_.adam);
    return r;
  }

  EpochLog run_epoch(const std::vector<DagTask>& train, const std::vector<DagTask>& validation) {
    if (train.empty()) throw Error(ErrorCode::kInvalidParams, "empty training split");
    const std::size_t epoch = log_.size() + 1;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(config_.seed, {0x5eed, epoch});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0, static_cast<std::int64_t>(i) - 1))]);

    EpochLog entry;
    entry.epoch = epoch;
    std::vector<const DagTask*> batch;
    std::vector<std::uint64_t> seeds;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t end = std::min(order.size(), start + config_.batch_size);
      batch.clear();
      seeds.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&train[order[k]]);
        seeds.push_back(derive_seed(config_.seed, {epoch, order[k]}));
      }
      const BatchResult r = update(batch, seeds);
      entry.train_mean_slowdown += r.mean_sampled_slowdown * static_cast<double>(end - start);
    }
    entry.train_mean_slowdown /= static_cast<double>(train.size());

    if (!validation.empty()) {
      const std::vector<double> target_ms = greedy_makespans(target_, validation, m_);
      if (baseline_val_.size() != validation.size())
        baseline_val_ = greedy_makespans(baseline_, validation, m_);
      entry.val_target_slowdown = mean_slowdown(validation, target_ms, m_);
      entry.val_baseline_slowdown = mean_slowdown(validation, baseline_val_, m_);
      if (validation.size() >= 2) {
        const TTestResult t = paired_t_test(target_ms, baseline_val_, config_.t_test_alpha);
        entry.t_stat = t.t_stat;
        if (t.target_better) {
          baseline_ = target_;
          baseline_val_ = target_ms;
          entry.refreshed = true;
          ++refreshes_;
        }
      }
    }
    log_.push_back(entry);
    return entry;
  }

 private:
  TrainConfig config_;
  std::size_t m_;
  Policy target_;
  Policy baseline_;
  std::vector<double> baseline_val_;
  std::vector<EpochLog> log_;
  std::size_t refreshes_ = 0;
};

struct TrainResult {
  Policy policy;
  std::vector<EpochLog> log;
  std::size_t refreshes = 0;
};

/// Runs config.epochs epochs. `on_epoch` may return false to stop early.
inline TrainResult train(const DatasetSplit& data, const TrainConfig& config, std::size_t m,
                         const std::function<bool(const EpochLog&, const Policy&)>& on_epoch = {}) {
  if (data.train.empty()) throw Error(ErrorCode::kInvalidParams, "dataset has no training tasks");
  Trainer trainer(config, m);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const EpochLog& entry = trainer.run_epoch(data.train, data.validation);
    if (on_epoch && !on_epoch(entry, trainer.target())) break;
  }
  return {trainer.target(), trainer.log(), trainer.refresh_count()};
}

inline void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_mean_slowdown,val_target_slowdown,val_baseline_slowdown,t_stat,refreshed\n";
  out.precision(10);
  for (const EpochLog& e : log)
    out << e.epoch << ',' << e.train_mean_slowdown << ',' << e.val_target_slowdown << ','
        << e.val_baseline_slowdown << ',' << e.t_stat << ',' << (e.refreshed ? 1 : 0) << '\n';
}

}  // namespace gosu
