#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gosu/diff/tape.hpp"
#include "gosu/diff/tensor.hpp"
#include "gosu/error.hpp"
#include "gosu/rng.hpp"

namespace gosu::diff {

struct ParamSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor first_moment;
  Tensor second_moment;
};

/// Gradients aligned with ParamStore::params() by index.
using Gradients = std::vector<Tensor>;

class ParamStore {
 public:
  ParamStore() = default;

  std::size_t add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw Error(ErrorCode::kInvalidParams, "duplicate parameter " + name);
    const std::size_t r = value.rows(), c = value.cols();
    index_[name] = params_.size();
    params_.push_back(Param{name, std::move(value), Tensor(r, c), Tensor(r, c)});
    return params_.size() - 1;
  }

  std::size_t index(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidParams, "no parameter " + name);
    return it->second;
  }

  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Param>& params() noexcept { return params_; }
  const Tensor& value(std::size_t i) const { return params_[i].value; }
  Tensor& value(std::size_t i) { return params_[i].value; }
  std::size_t size() const noexcept { return params_.size(); }

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  Var on(Tape& tape, std::size_t i, bool track_grad = true) const {
    return track_grad ? tape.parameter(params_[i].value, i) : tape.external(params_[i].value);
  }

  Gradients zero_gradients() const {
    Gradients g;
    g.reserve(params_.size());
    for (const Param& p : params_) g.emplace_back(p.value.rows(), p.value.cols());
    return g;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.value.size();
    return n;
  }

  bool operator==(const ParamStore& o) const {
    if (step_ != o.step_ || params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Param& a = params_[i];
      const Param& b = o.params_[i];
      if (a.name != b.name || a.value != b.value || a.first_moment != b.first_moment ||
          a.second_moment != b.second_moment)
        return false;
    }
    return true;
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

/// Every entry i.i.d. Unif(-1/sqrt(d), 1/sqrt(d)), drawn in spec order.
inline ParamStore init_params(const std::vector<ParamSpec>& specs, std::size_t d,
                              std::uint64_t seed) {
  if (d < 1) throw Error(ErrorCode::kInvalidParams, "embedding dimension must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng = make_rng(seed, {0x1417});
  ParamStore store;
  for (const ParamSpec& s : specs) {
    Tensor t(s.rows, s.cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * uniform01(rng) - 1.0) * bound;
    store.add(s.name, std::move(t));
  }
  return store;
}

/// Adds tape gradients of the store's parameters into `grads`, scaled by `weight`.
inline void accumulate(const Tape& tape, Gradients& grads, double weight = 1.0) {
  tape.for_each_parameter_grad([&](std::size_t slot, const Tensor& g) {
    Tensor& dst = grads[slot];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  });
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_min = -1.0;
  double clip_max = 1.0;
};

/// One Adam update on descent gradients, clamped elementwise to [clip_min, clip_max] first.
inline void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg = {}) {
  if (grads.size() != store.size())
    throw Error(ErrorCode::kShapeMismatch, "gradient count does not match parameter count");
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (!grads[p].same_shape(store.value(p)))
      throw Error(ErrorCode::kShapeMismatch, "gradient shape for " + store.params()[p].name);
    if (!grads[p].all_finite()) throw Error(ErrorCode::kNonFinite, "non-finite gradient");
  }
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    Param& param = store.params()[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = std::clamp(g[i], cfg.clip_min, cfg.clip_max);
      double& m = param.first_moment[i];
      double& v = param.second_moment[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * gi;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * gi * gi;
      param.value[i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint (JSON). Doubles are written in shortest round-trip form.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::ordered_json to_json(const ParamStore& store) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["step"] = store.step();
  auto& arr = j["params"] = nlohmann::ordered_json::array();
  for (const Param& p : store.params()) {
    arr.push_back({{"name", p.name},
                   {"rows", p.value.rows()},
                   {"cols", p.value.cols()},
                   {"value", p.value.values()},
                   {"m", p.first_moment.values()},
                   {"v", p.second_moment.values()}});
  }
  return j;
}

inline ParamStore param_store_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw Error(ErrorCode::kParseError, "unsupported checkpoint version");
    ParamStore store;
    for (const auto& p : j.at("params")) {
      const auto rows = p.at("rows").get<std::size_t>();
      const auto cols = p.at("cols").get<std::size_t>();
      const std::size_t i =
          store.add(p.at("name").get<std::string>(),
                    Tensor(rows, cols, p.at("value").get<std::vector<double>>()));
      store.params()[i].first_moment = Tensor(rows, cols, p.at("m").get<std::vector<double>>());
      store.params()[i].second_moment = Tensor(rows, cols, p.at("v").get<std::vector<double>>());
    }
    store.set_step(j.at("step").get<std::uint64_t>());
    return store;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + ex.what());
  }
}

}  // namespace gosu::diff
