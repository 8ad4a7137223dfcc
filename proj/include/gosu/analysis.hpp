#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gosu/dag.hpp"
#include "gosu/diff/param_store.hpp"
#include "gosu/error.hpp"
#include "gosu/sim.hpp"

namespace gosu {

// ---------------------------------------------------------------------------
// Soft rank: Euclidean projection of -scores/epsilon onto the permutahedron
// of (n, n-1, ..., 1), solved by sorting plus pool-adjacent-violators.
// ---------------------------------------------------------------------------

struct SoftRankResult {
  std::vector<double> ranks;
  std::vector<std::size_t> sorted;       // node indices by descending -score/eps
  std::vector<std::size_t> block_of;      // isotonic block id of each sorted position
  std::vector<std::size_t> block_sizes;
  double epsilon = 1.0;
};

namespace detail {

/// Non-increasing isotonic regression of y; fills per-position block ids.
inline std::vector<double> isotonic_decreasing(const std::vector<double>& y,
                                               std::vector<std::size_t>& block_of,
                                               std::vector<std::size_t>& block_sizes) {
  struct Block {
    double sum;
    std::size_t count;
    std::size_t first;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < y.size(); ++i) {
    blocks.push_back({y[i], 1, i});
    while (blocks.size() > 1) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / static_cast<double>(a.count) > b.sum / static_cast<double>(b.count)) break;
      Block merged{a.sum + b.sum, a.count + b.count, a.first};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> v(y.size());
  block_of.assign(y.size(), 0);
  block_sizes.clear();
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const double mean = blocks[k].sum / static_cast<double>(blocks[k].count);
    for (std::size_t i = blocks[k].first; i < blocks[k].first + blocks[k].count; ++i) {
      v[i] = mean;
      block_of[i] = k;
    }
    block_sizes.push_back(blocks[k].count);
  }
  return v;
}

}  // namespace detail

/// Differentiable descending ranks: the largest score gets rank ~1. Sums to
/// n(n+1)/2 and tends to the exact ranks as epsilon -> 0.
inline SoftRankResult soft_rank(std::span<const double> scores, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kInvalidParams, "epsilon must be positive");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::kNonFinite, "soft_rank: non-finite score");
  const std::size_t n = scores.size();
  SoftRankResult r;
  r.epsilon = epsilon;
  r.sorted.resize(n);
  std::iota(r.sorted.begin(), r.sorted.end(), std::size_t{0});
  // Descending in z = -s/eps, i.e. ascending in s.
  std::stable_sort(r.sorted.begin(), r.sorted.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> zs(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    zs[i] = -scores[r.sorted[i]] / epsilon;
    y[i] = zs[i] - static_cast<double>(n - i);
  }
  const std::vector<double> v = detail::isotonic_decreasing(y, r.block_of, r.block_sizes);
  r.ranks.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) r.ranks[r.sorted[i]] = zs[i] - v[i];
  return r;
}

/// Vector-Jacobian product: d(loss)/d(scores) given d(loss)/d(ranks).
inline std::vector<double> soft_rank_vjp(const SoftRankResult& r, std::span<const double> upstream) {
  const std::size_t n = r.ranks.size();
  std::vector<double> g(n), block_mean(r.block_sizes.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = upstream[r.sorted[i]];
    block_mean[r.block_of[i]] += g[i];
  }
  for (std::size_t k = 0; k < block_mean.size(); ++k)
    block_mean[k] /= static_cast<double>(r.block_sizes[k]);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[r.sorted[i]] = -(g[i] - block_mean[r.block_of[i]]) / r.epsilon;
  return out;
}

// ---------------------------------------------------------------------------
// Linear imitation of a priority policy
// ---------------------------------------------------------------------------

inline constexpr std::size_t kImitationFeatures = 4;
inline constexpr std::array<const char*, kImitationFeatures> kImitationFeatureNames = {
    "exec_time", "out_degree", "in_degree", "is_critical"};

using ImitationRow = std::array<double, kImitationFeatures>;

struct LinearScorer {
  ImitationRow w{};
  double b = 0.0;

  static constexpr double kWeightMax = 1.0;
  static constexpr double kBiasMax = 10.0;

  void project() {
    for (double& x : w) x = std::clamp(x, 0.0, kWeightMax);
    b = std::clamp(b, 0.0, kBiasMax);
  }

  double score(const ImitationRow& x) const {
    double s = b;
    for (std::size_t k = 0; k < kImitationFeatures; ++k) s += w[k] * x[k];
    return s;
  }
};

/// Per-feature min-max scaling fitted over a dataset.
struct FeatureScaling {
  ImitationRow min{};
  ImitationRow max{};

  ImitationRow apply(const ImitationRow& x) const {
    ImitationRow out{};
    for (std::size_t k = 0; k < kImitationFeatures; ++k) {
      const double span = max[k] - min[k];
      out[k] = span > 0.0 ? (x[k] - min[k]) / span : 0.0;
    }
    return out;
  }
};

inline std::vector<ImitationRow> imitation_features(const DagTask& task) {
  const DerivedStats& s = task.stats();
  std::vector<ImitationRow> rows(task.size());
  for (NodeId v = 0; v < task.size(); ++v)
    rows[v] = {static_cast<double>(task.wcet(v)), static_cast<double>(s.out_degrees[v]),
               static_cast<double>(s.in_degrees[v]), s.is_critical[v] ? 1.0 : 0.0};
  return rows;
}

inline FeatureScaling fit_scaling(const std::vector<DagTask>& tasks) {
  FeatureScaling sc;
  sc.min.fill(std::numeric_limits<double>::infinity());
  sc.max.fill(-std::numeric_limits<double>::infinity());
  for (const DagTask& t : tasks)
    for (const ImitationRow& r : imitation_features(t))
      for (std::size_t k = 0; k < kImitationFeatures; ++k) {
        sc.min[k] = std::min(sc.min[k], r[k]);
        sc.max[k] = std::max(sc.max[k], r[k]);
      }
  if (tasks.empty()) sc = FeatureScaling{};
  return sc;
}

/// Priority order from descending score, lowest index first on ties.
inline PriorityOrder scorer_order(const DagTask& task, const LinearScorer& scorer,
                                  const FeatureScaling& scaling) {
  const auto rows = imitation_features(task);
  std::vector<double> s(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) s[i] = scorer.score(scaling.apply(rows[i]));
  std::vector<NodeId> perm(rows.size());
  std::iota(perm.begin(), perm.end(), NodeId{0});
  std::stable_sort(perm.begin(), perm.end(), [&](NodeId a, NodeId b) { return s[a] > s[b]; });
  return PriorityOrder(std::move(perm));
}

struct SoftRankConfig {
  double epsilon = 1e-3;
  double l1_strength = 3.0;
  std::size_t steps = 1000;
  double learning_rate = 0.01;
};

struct ImitationSample {
  std::vector<ImitationRow> features;  // already scaled
  std::vector<double> label_ranks;     // 1 = highest priority
};

inline ImitationSample make_sample(const DagTask& task, const PriorityOrder& teacher,
                                   const FeatureScaling& scaling) {
  ImitationSample s;
  for (const ImitationRow& r : imitation_features(task)) s.features.push_back(scaling.apply(r));
  s.label_ranks.resize(task.size());
  const auto rank = teacher.ranks();
  for (NodeId v = 0; v < task.size(); ++v) s.label_ranks[v] = static_cast<double>(rank[v] + 1);
  return s;
}

/// Objective sum_tasks MSE(soft_rank(s), labels) + l1 * |w|_1 and its gradient.
inline double imitation_loss(const std::vector<ImitationSample>& samples, const LinearScorer& sc,
                             const SoftRankConfig& cfg, ImitationRow* grad_w = nullptr,
                             double* grad_b = nullptr) {
  double loss = 0.0;
  ImitationRow gw{};
  double gb = 0.0;
  std::vector<double> scores, up;
  for (const ImitationSample& smp : samples) {
    const std::size_t n = smp.features.size();
    scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = sc.score(smp.features[i]);
    const SoftRankResult r = soft_rank(scores, cfg.epsilon);
    up.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = r.ranks[i] - smp.label_ranks[i];
      loss += e * e / static_cast<double>(n);
      up[i] = 2.0 * e / static_cast<double>(n);
    }
    if (!grad_w) continue;
    const std::vector<double> ds = soft_rank_vjp(r, up);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < kImitationFeatures; ++k) gw[k] += ds[i] * smp.features[i][k];
      gb += ds[i];
    }
  }
  for (std::size_t k = 0; k < kImitationFeatures; ++k) {
    loss += cfg.l1_strength * std::abs(sc.w[k]);
    gw[k] += cfg.l1_strength * (sc.w[k] >= 0.0 ? 1.0 : -1.0);
  }
  if (grad_w) *grad_w = gw;
  if (grad_b) *grad_b = gb;
  return loss;
}

/// Projected Adam on the imitation objective, starting from `init`.
inline LinearScorer fit_scorer(const std::vector<ImitationSample>& samples,
                               const SoftRankConfig& cfg, LinearScorer init = {{0.5, 0.5, 0.5, 0.5}, 0.0}) {
  if (!(cfg.epsilon > 0.0)) throw Error(ErrorCode::kInvalidParams, "epsilon must be positive");
  diff::ParamStore store;
  store.add("w", diff::Tensor::row({init.w.begin(), init.w.end()}));
  store.add("b", diff::Tensor(1, 1, init.b));
  diff::AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.clip_min = -std::numeric_limits<double>::infinity();
  adam.clip_max = std::numeric_limits<double>::infinity();
  LinearScorer sc = init;
  sc.project();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ImitationRow gw{};
    double gb = 0.0;
    imitation_loss(samples, sc, cfg, &gw, &gb);
    diff::Gradients grads{diff::Tensor::row({gw.begin(), gw.end()}), diff::Tensor(1, 1, gb)};
    diff::adam_step(store, grads, adam);
    for (std::size_t k = 0; k < kImitationFeatures; ++k) sc.w[k] = store.value(0)[k];
    sc.b = store.value(1)[0];
    sc.project();
    for (std::size_t k = 0; k < kImitationFeatures; ++k) store.value(0)[k] = sc.w[k];
    store.value(1)[0] = sc.b;
  }
  return sc;
}

struct ImitationReport {
  LinearScorer scorer;
  FeatureScaling scaling;
  double scorer_mean_slowdown = 0.0;
  double policy_mean_slowdown = 0.0;
  double slowdown_ratio_vs_policy = 0.0;
};

/// Fits a scorer to teacher orders on `fit_tasks` and compares slowdowns on
/// `eval_tasks`. `teacher` maps a task to the policy's priority order.
template <class Teacher>
ImitationReport fit_imitation(const std::vector<DagTask>& fit_tasks,
                              const std::vector<DagTask>& eval_tasks, Teacher&& teacher,
                              std::size_t m, const SoftRankConfig& cfg = {}) {
  ImitationReport rep;
  rep.scaling = fit_scaling(fit_tasks);
  std::vector<ImitationSample> samples;
  samples.reserve(fit_tasks.size());
  for (const DagTask& t : fit_tasks) samples.push_back(make_sample(t, teacher(t), rep.scaling));
  rep.scorer = fit_scorer(samples, cfg);
  for (const DagTask& t : eval_tasks) {
    rep.scorer_mean_slowdown += slowdown(t, scorer_order(t, rep.scorer, rep.scaling), m);
    rep.policy_mean_slowdown += slowdown(t, teacher(t), m);
  }
  if (!eval_tasks.empty()) {
    rep.scorer_mean_slowdown /= static_cast<double>(eval_tasks.size());
    rep.policy_mean_slowdown /= static_cast<double>(eval_tasks.size());
    rep.slowdown_ratio_vs_policy = rep.scorer_mean_slowdown / rep.policy_mean_slowdown;
  }
  return rep;
}

inline nlohmann::ordered_json to_json(const ImitationReport& r) {
  nlohmann::ordered_json weights;
  for (std::size_t k = 0; k < kImitationFeatures; ++k) weights[kImitationFeatureNames[k]] = r.scorer.w[k];
  return {{"weights", weights},
          {"bias", r.scorer.b},
          {"slowdown_ratio_vs_policy", r.slowdown_ratio_vs_policy},
          {"scorer_mean_slowdown", r.scorer_mean_slowdown},
          {"policy_mean_slowdown", r.policy_mean_slowdown}};
}

}  // namespace gosu
