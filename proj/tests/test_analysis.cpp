#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gosu/analysis.hpp"
#include "gosu/heuristics.hpp"
#include "gosu/taskgen.hpp"
#include "test_graphs.hpp"

using namespace gosu;

namespace {

// Non-increasing isotonic fit by the min-max formula
// v_i = min_{j <= i} max_{k >= i} mean(y_j..y_k).
std::vector<double> isotonic_oracle(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t k = i; k < n; ++k) {
        const double mean = std::accumulate(y.begin() + j, y.begin() + k + 1, 0.0) / static_cast<double>(k - j + 1);
        hi = std::max(hi, mean);
      }
      best = std::min(best, hi);
    }
    v[i] = best;
  }
  return v;
}

// Soft rank from the oracle fit, following the same sort convention.
std::vector<double> soft_rank_oracle(const std::vector<double>& s, double eps) {
  const std::size_t n = s.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  std::vector<double> z(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = -s[idx[i]] / eps;
    y[i] = z[i] - static_cast<double>(n - i);
  }
  const auto v = isotonic_oracle(y);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[idx[i]] = z[i] - v[i];
  return r;
}

std::vector<double> random_scores(Rng& rng, std::size_t n, double spread) {
  std::vector<double> s(n);
  for (double& x : s) x = spread * (2.0 * uniform01(rng) - 1.0);
  return s;
}

}  // namespace

TEST(SoftRank, SmallEpsilonGivesHardRanks) {
  const std::vector<double> s{2.4, 3.0, 1.3};
  const auto r = soft_rank(s, 1e-6).ranks;
  EXPECT_NEAR(r[0], 2.0, 1e-9);
  EXPECT_NEAR(r[1], 1.0, 1e-9);
  EXPECT_NEAR(r[2], 3.0, 1e-9);
}

TEST(SoftRank, EqualScoresOrLargeEpsilonGiveMeanRank) {
  const std::vector<double> eq(5, 0.3);
  for (double x : soft_rank(eq, 0.1).ranks) EXPECT_NEAR(x, 3.0, 1e-12);
  const std::vector<double> s{0.1, -0.2, 0.05, 0.3};
  for (double x : soft_rank(s, 1e6).ranks) EXPECT_NEAR(x, 2.5, 1e-5);
}

TEST(SoftRank, MatchesIndependentIsotonicOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 1, 9));
    const auto s = random_scores(rng, n, 3.0);
    const double eps = std::pow(10.0, uniform01(rng) * 4.0 - 2.0);
    const auto got = soft_rank(s, eps).ranks;
    const auto want = soft_rank_oracle(s, eps);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], want[i], 1e-9 * std::max(1.0, std::abs(want[i])));
  }
}

TEST(SoftRank, SumAndPermutahedronMembershipAndOrder) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 1, 30));
    const auto s = random_scores(rng, n, 2.0);
    const double eps = std::pow(10.0, uniform01(rng) * 4.0 - 3.0);
    const auto r = soft_rank(s, eps).ranks;
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), nn * (nn + 1) / 2, 1e-8 * nn * nn);
    // The k smallest ranks sum to at least 1 + ... + k.
    std::vector<double> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    double partial = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      partial += sorted[k];
      const double kk = static_cast<double>(k + 1);
      EXPECT_GE(partial, kk * (kk + 1) / 2 - 1e-8 * nn * nn);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (s[i] > s[j]) EXPECT_LE(r[i], r[j] + 1e-9);
  }
}

TEST(SoftRank, VjpMatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 2, 12));
    const auto s = random_scores(rng, n, 2.0);
    const double eps = 0.3 + uniform01(rng);
    const auto u = random_scores(rng, n, 1.0);
    const SoftRankResult base = soft_rank(s, eps);
    const auto g = soft_rank_vjp(base, u);
    auto f = [&](const std::vector<double>& x) {
      const auto r = soft_rank(x, eps).ranks;
      return std::inner_product(r.begin(), r.end(), u.begin(), 0.0);
    };
    const double h = 1e-7;
    for (std::size_t i = 0; i < n; ++i) {
      auto up = s, down = s;
      up[i] += h;
      down[i] -= h;
      // Piecewise linear: skip coordinates where the block structure changes.
      const SoftRankResult ru = soft_rank(up, eps), rd = soft_rank(down, eps);
      if (ru.block_of != base.block_of || rd.block_of != base.block_of || ru.sorted != base.sorted ||
          rd.sorted != base.sorted)
        continue;
      EXPECT_NEAR(g[i], (f(up) - f(down)) / (2 * h), 1e-5);
    }
  }
}

TEST(SoftRank, Errors) {
  const std::vector<double> s{1.0, 2.0};
  EXPECT_THROW(soft_rank(s, 0.0), Error);
  const std::vector<double> bad{1.0, std::nan("")};
  try {
    soft_rank(bad, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

TEST(Imitation, FeaturesAndScaling) {
  const DagTask t = testing_graphs::diamond();
  const auto rows = imitation_features(t);
  EXPECT_EQ(rows[2], (ImitationRow{6, 1, 1, 1}));
  EXPECT_EQ(rows[1], (ImitationRow{4, 1, 1, 0}));
  const FeatureScaling sc = fit_scaling({t});
  EXPECT_EQ(sc.apply(rows[2]), (ImitationRow{1, 0.5, 0.5, 1}));
  EXPECT_EQ(sc.apply(rows[0]), (ImitationRow{0, 1, 0, 1}));
}

TEST(Imitation, ScorerOrderBreaksTiesByIndex) {
  const DagTask t = testing_graphs::fork_join(1, {3, 3, 3}, 1);
  const LinearScorer zero{};
  EXPECT_EQ(scorer_order(t, zero, fit_scaling({t})).perm(), testing_graphs::identity(5).perm());
  LinearScorer exec{{1, 0, 0, 0}, 0};
  EXPECT_EQ(scorer_order(t, exec, fit_scaling({t})).perm(), (std::vector<NodeId>{1, 2, 3, 0, 4}));
}

TEST(Imitation, ProjectionClampsToBox) {
  LinearScorer s{{-1, 0.5, 2, 1}, 20};
  s.project();
  EXPECT_EQ(s.w, (ImitationRow{0, 0.5, 1, 1}));
  EXPECT_EQ(s.b, 10.0);
}

TEST(Imitation, LossGradientMatchesFiniteDifferences) {
  std::vector<DagTask> tasks;
  for (std::uint64_t i = 0; i < 5; ++i) {
    Rng rng = make_rng(4, {i});
    tasks.push_back(generate_task(preset("low"), rng));
  }
  const FeatureScaling sc = fit_scaling(tasks);
  std::vector<ImitationSample> samples;
  for (const DagTask& t : tasks) samples.push_back(make_sample(t, longest_tail_first(t), sc));
  SoftRankConfig cfg;
  cfg.epsilon = 0.5;
  const LinearScorer at{{0.3, 0.6, 0.2, 0.8}, 0.1};
  ImitationRow gw{};
  double gb = 0;
  imitation_loss(samples, at, cfg, &gw, &gb);
  EXPECT_NEAR(gb, 0.0, 1e-9);  // ranks are shift invariant
  for (std::size_t k = 0; k < kImitationFeatures; ++k) {
    LinearScorer up = at, down = at;
    up.w[k] += 1e-7;
    down.w[k] -= 1e-7;
    const double fd = (imitation_loss(samples, up, cfg) - imitation_loss(samples, down, cfg)) / 2e-7;
    EXPECT_NEAR(gw[k], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Imitation, RecoversPlantedExecTimeScorer) {
  std::vector<DagTask> tasks;
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng = make_rng(5, {i});
    tasks.push_back(generate_task(preset("low"), rng));
  }
  const FeatureScaling sc = fit_scaling(tasks);
  const LinearScorer planted{{1, 0, 0, 0}, 0};
  std::vector<ImitationSample> samples;
  for (const DagTask& t : tasks) samples.push_back(make_sample(t, scorer_order(t, planted, sc), sc));
  const LinearScorer fit = fit_scorer(samples, SoftRankConfig{});
  EXPECT_GT(fit.w[0], 0.05);
  for (std::size_t k = 1; k < kImitationFeatures; ++k) EXPECT_LE(fit.w[k], 0.05) << kImitationFeatureNames[k];
}

TEST(Imitation, StrongSparsityZeroesWeights) {
  std::vector<DagTask> tasks;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng = make_rng(6, {i});
    tasks.push_back(generate_task(preset("low"), rng));
  }
  const FeatureScaling sc = fit_scaling(tasks);
  std::vector<ImitationSample> samples;
  for (const DagTask& t : tasks) samples.push_back(make_sample(t, longest_tail_first(t), sc));
  SoftRankConfig cfg;
  cfg.l1_strength = 1e6;
  const LinearScorer fit = fit_scorer(samples, cfg);
  for (double w : fit.w) EXPECT_EQ(w, 0.0);
}

TEST(Imitation, ReportJsonShape) {
  ImitationReport r;
  r.scorer = {{0.1, 0.2, 0.3, 0.4}, 0.5};
  r.slowdown_ratio_vs_policy = 1.02;
  const auto j = to_json(r);
  EXPECT_EQ(j["weights"]["in_degree"], 0.3);
  EXPECT_EQ(j["bias"], 0.5);
  EXPECT_EQ(j["slowdown_ratio_vs_policy"], 1.02);
}
