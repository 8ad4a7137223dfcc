#pragma once

// Central finite-difference gradient checker shared by the unit tests and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gosu/diff/tape.hpp"
#include "gosu/policy.hpp"

namespace gradcheck {

using gosu::diff::Tape;
using gosu::diff::Tensor;
using gosu::diff::Var;

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Result {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline void note(Result& r, double analytic, double numeric, double floor, const std::string& where) {
  const double e = relative_error(analytic, numeric, floor);
  ++r.checked;
  if (e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst = where + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
  }
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Checks d f / d inputs for a scalar-valued builder.
inline Result check(const Builder& f, std::vector<Tensor> inputs, double h = 1e-5, double floor = 1e-6) {
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value()[0];
  };
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
  const Var out = f(tape, vars);
  tape.backward(out);
  Result r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& g = vars[i].grad();
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + h;
      const double up = eval(inputs);
      inputs[i][k] = saved - h;
      const double down = eval(inputs);
      inputs[i][k] = saved;
      const double analytic = g.size() ? g[k] : 0.0;
      note(r, analytic, (up - down) / (2 * h), floor, "input " + std::to_string(i) + "[" + std::to_string(k) + "]");
    }
  }
  return r;
}

/// Checks d(-log p(order | task)) / d(every policy parameter) under teacher
/// forcing. With `dropout_seed` set, dropout is active with a mask replayed
/// from that seed on every evaluation.
inline Result check_policy_loss(gosu::Policy policy, const gosu::DagTask& task, const gosu::PriorityOrder& order,
                                const std::uint64_t* dropout_seed = nullptr, double h = 1e-5,
                                double floor = 1e-6) {
  const bool training = dropout_seed != nullptr;
  auto loss = [&](gosu::diff::Tape& tape, bool track) {
    gosu::Rng rng(training ? *dropout_seed : 0);
    const auto run = policy.run(tape, task, gosu::DecodeMode::kForced, &rng, training, track, &order);
    return gosu::diff::scale(run.decode.log_prob, -1.0);
  };
  Tape tape;
  tape.backward(loss(tape, true));
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < policy.params().size(); ++i) grads.emplace_back(policy.params().value(i).rows(),
                                                                            policy.params().value(i).cols());
  tape.for_each_parameter_grad([&](std::size_t slot, const Tensor& g) {
    for (std::size_t k = 0; k < g.size(); ++k) grads[slot][k] += g[k];
  });
  Result r;
  for (std::size_t i = 0; i < policy.params().size(); ++i) {
    Tensor& value = policy.params().value(i);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double saved = value[k];
      value[k] = saved + h;
      Tape a;
      const double up = loss(a, false).value()[0];
      value[k] = saved - h;
      Tape b;
      const double down = loss(b, false).value()[0];
      value[k] = saved;
      note(r, grads[i][k], (up - down) / (2 * h), floor,
           policy.params().params()[i].name + "[" + std::to_string(k) + "]");
    }
  }
  return r;
}

}  // namespace gradcheck
