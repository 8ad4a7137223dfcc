#include <gtest/gtest.h>

#include <cmath>

#include "gosu/diff/param_store.hpp"
#include "gosu/diff/tape.hpp"
#include "gradcheck.hpp"

using namespace gosu;
using namespace gosu::diff;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform01(rng);
  return t;
}

// Reduces an arbitrary-shape output to a scalar with fixed random weights.
Var weighted_sum(Tape& t, Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum_all(mul(y, t.constant(random_tensor(rng, y.rows(), y.cols()))));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Ops, AffineWithAndWithoutBias) {
  Rng rng(1);
  const auto r = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, affine(v[0], v[1], v[2])); },
      {random_tensor(rng, 3, 4), random_tensor(rng, 5, 4), random_tensor(rng, 1, 5)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  const auto r2 = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, affine(v[0], v[1])); },
      {random_tensor(rng, 2, 3), random_tensor(rng, 4, 3)});
  EXPECT_LT(r2.max_rel_error, kTol) << r2.worst;
}

TEST(Ops, AffineValues) {
  Tape t;
  const Var x = t.constant(Tensor(1, 2, std::vector<double>{1, 2}));
  const Var w = t.constant(Tensor(2, 2, std::vector<double>{1, 0, 3, -1}));
  const Var b = t.constant(Tensor(1, 2, std::vector<double>{0.5, 0.0}));
  EXPECT_EQ(affine(x, w, b).value().values(), (std::vector<double>{1.5, 1.0}));
}

TEST(Ops, MatmulTanhEluLogScale) {
  Rng rng(2);
  const auto r = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) {
        const Var y = tanh(matmul(v[0], v[1]));
        return weighted_sum(t, add(elu(scale(y, 3.0)), log(v[2])));
      },
      {random_tensor(rng, 3, 2), random_tensor(rng, 2, 4), random_tensor(rng, 3, 4, 0.5, 2.0)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Ops, EluValuesAndTanhGradientAtZero) {
  Tape t;
  const Var x = t.variable(Tensor(1, 3, std::vector<double>{-1.0, 0.0, 2.0}));
  const Var y = elu(x);
  EXPECT_NEAR(y.value()[0], std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(y.value()[2], 2.0);
  Tape t2;
  const Var z = t2.variable(Tensor(1, 1, 0.0));
  t2.backward(tanh(z));
  EXPECT_DOUBLE_EQ(z.grad()[0], 1.0);
}

TEST(Ops, MulAddConcatSumRowsRowReshapePick) {
  Rng rng(3);
  const auto r = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) {
        const Var c = concat_cols({v[0], mul(v[0], v[1]), v[1]});
        const Var s = add(sum_rows(c, {0, 2}), row(c, 1));
        const Var reshaped = reshape(c, c.cols(), c.rows());
        return add(weighted_sum(t, s), add(weighted_sum(t, reshaped, 7), pick(reshaped, 4)));
      },
      {random_tensor(rng, 3, 2), random_tensor(rng, 3, 2)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Ops, SumRowsOfEmptySetIsZero) {
  Tape t;
  const Var x = t.variable(Tensor(2, 3, 1.0));
  const Var s = sum_rows(x, {});
  EXPECT_EQ(s.value(), Tensor(1, 3));
}

TEST(Ops, MaskedSoftmax) {
  Rng rng(4);
  const std::vector<bool> mask{true, false, true, true, false};
  const auto r = gradcheck::check(
      [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, masked_softmax(v[0], mask)); },
      {random_tensor(rng, 5, 1, -3, 3)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;

  Tape t;
  const Var y = masked_softmax(t.constant(random_tensor(rng, 5, 1, -3, 3)), mask);
  double total = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (!mask[i]) EXPECT_EQ(y.value()[i], 0.0);
    total += y.value()[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);

  const Var eq = masked_softmax(t.constant(Tensor(5, 1, 0.7)), mask);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(eq.value()[i], mask[i] ? 1.0 / 3.0 : 0.0, 1e-15);

  try {
    masked_softmax(t.constant(Tensor(2, 1)), {false, false});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllMasked);
  }
}

TEST(Ops, NeighborhoodAttention) {
  Rng rng(5);
  auto nbrs = std::make_shared<const Neighborhoods>(Neighborhoods{{0}, {1, 0}, {2, 0, 1}, {3, 2}});
  const auto r = gradcheck::check(
      [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, neighborhood_attention(v[0], v[1], v[2], nbrs)); },
      {random_tensor(rng, 4, 3), random_tensor(rng, 4, 1), random_tensor(rng, 4, 1)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Ops, NeighborhoodAttentionValues) {
  Tape t;
  auto nbrs = std::make_shared<const Neighborhoods>(Neighborhoods{{0}, {1, 0}});
  const Var v = t.constant(Tensor(2, 1, std::vector<double>{2.0, 4.0}));
  const Var q = t.constant(Tensor(2, 1, std::vector<double>{0.3, -0.1}));
  const Var k = t.constant(Tensor(2, 1, std::vector<double>{1.0, 0.0}));
  const Tensor& y = neighborhood_attention(v, q, k, nbrs).value();
  EXPECT_DOUBLE_EQ(y[0], 2.0);  // singleton neighborhood
  // Node 1 attends to {1, 0} with logits k1 = 0 and k0 = 1 (query cancels).
  const double a0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(y[1], a0 * 2.0 + (1 - a0) * 4.0, 1e-14);
}

TEST(Ops, DropoutFixedMaskGradient) {
  Rng rng(6);
  const auto r = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) {
        Rng mask_rng(17);
        return weighted_sum(t, dropout(v[0], 0.3, true, mask_rng));
      },
      {random_tensor(rng, 4, 4)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Ops, DropoutIdentityAndExpectation) {
  Rng rng(7);
  Tape t;
  const Tensor x = random_tensor(rng, 2, 2, 0.5, 1.5);
  const Var v = t.constant(x);
  EXPECT_EQ(dropout(v, 0.0, true, rng).value(), x);
  EXPECT_EQ(dropout(v, 0.5, false, rng).value(), x);
  const Var one = t.constant(Tensor(1, 1, 1.0));
  double sum = 0.0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) sum += dropout(one, 0.1, true, rng).value()[0];
  EXPECT_NEAR(sum / trials, 1.0, 0.01);
}

TEST(Ops, ShapeMismatchAndNonFinite) {
  Tape t;
  const Var a = t.constant(Tensor(2, 3));
  const Var b = t.constant(Tensor(3, 2));
  try {
    add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  try {
    log(t.constant(Tensor(1, 1, 0.0)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

TEST(Ops, RandomThreeLayerComposition) {
  Rng rng(8);
  const auto r = gradcheck::check(
      [](Tape& t, const std::vector<Var>& v) {
        Var h = tanh(affine(v[0], v[1], v[2]));
        h = elu(affine(h, v[3]));
        h = tanh(affine(h, v[4]));
        return weighted_sum(t, h);
      },
      {random_tensor(rng, 3, 4), random_tensor(rng, 5, 4), random_tensor(rng, 1, 5), random_tensor(rng, 6, 5),
       random_tensor(rng, 2, 6)});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Params, InitRangeAndDeterminism) {
  const std::vector<ParamSpec> specs{{"w", 50, 40}, {"b", 1, 40}};
  for (std::size_t d : {64, 1}) {
    const ParamStore s = init_params(specs, d, 3);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (const Param& p : s.params())
      for (double x : p.value.values()) {
        EXPECT_GE(x, -bound);
        EXPECT_LE(x, bound);
      }
    EXPECT_EQ(s, init_params(specs, d, 3));
  }
  EXPECT_FALSE(init_params(specs, 64, 3) == init_params(specs, 64, 4));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore s;
  s.add("x", Tensor(1, 2, std::vector<double>{0.5, -0.5}));
  const Tensor before = s.value(0);
  adam_step(s, {Tensor(1, 2)});
  EXPECT_EQ(s.value(0), before);
  EXPECT_EQ(s.step(), 1u);
}

TEST(Adam, LargeGradientsAreClipped) {
  ParamStore a, b;
  a.add("x", Tensor(1, 1, 0.0));
  b.add("x", Tensor(1, 1, 0.0));
  for (int i = 0; i < 5; ++i) {
    adam_step(a, {Tensor(1, 1, 10.0 * (i + 1))});
    adam_step(b, {Tensor(1, 1, 1.0)});
  }
  EXPECT_EQ(a.value(0), b.value(0));
}

TEST(Adam, QuadraticConverges) {
  ParamStore s;
  s.add("x", Tensor(1, 1, 0.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  const double target = 0.7;
  for (int i = 0; i < 1000; ++i) adam_step(s, {Tensor(1, 1, 2.0 * (s.value(0)[0] - target))}, cfg);
  EXPECT_NEAR(s.value(0)[0], target, 1e-3);
}

TEST(Adam, RejectsNonFinite) {
  ParamStore s;
  s.add("x", Tensor(1, 1, 0.0));
  EXPECT_THROW(adam_step(s, {Tensor(1, 1, std::nan(""))}), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  ParamStore s = init_params({{"w", 3, 4}, {"b", 1, 4}}, 4, 12);
  adam_step(s, {Tensor(3, 4, 0.3), Tensor(1, 4, -0.2)});
  const auto text = to_json(s).dump();
  const ParamStore back = param_store_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.step(), 1u);
  EXPECT_EQ(back.params()[0].second_moment, s.params()[0].second_moment);
}
