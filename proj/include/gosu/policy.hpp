#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gosu/dag.hpp"
#include "gosu/diff/param_store.hpp"
#include "gosu/diff/tape.hpp"
#include "gosu/error.hpp"
#include "gosu/rng.hpp"

namespace gosu {

enum class PathMode { kBoth, kForward, kInverse };

inline std::string_view to_string(PathMode mode) {
  switch (mode) {
    case PathMode::kBoth: return "both";
    case PathMode::kForward: return "forward";
    case PathMode::kInverse: return "inverse";
  }
  return "both";
}

inline PathMode path_mode_from_string(std::string_view s) {
  if (s == "both") return PathMode::kBoth;
  if (s == "forward") return PathMode::kForward;
  if (s == "inverse") return PathMode::kInverse;
  throw Error(ErrorCode::kInvalidParams, "unknown path mode '" + std::string(s) + "'");
}

struct EncoderConfig {
  std::size_t layers = 2;  // K
  std::size_t heads = 4;   // H
  std::size_t dim = 64;    // d
  double dropout = 0.1;
  PathMode path_mode = PathMode::kBoth;
  double inverse_temperature = 5.0;  // C

  bool operator==(const EncoderConfig&) const = default;
};

inline void validate(const EncoderConfig& c) {
  auto bad = [](const char* what) { throw Error(ErrorCode::kInvalidParams, what); };
  if (c.layers < 1) bad("encoder needs at least one layer");
  if (c.heads < 1) bad("encoder needs at least one head");
  if (c.path_mode == PathMode::kBoth && c.heads % 2 != 0) bad("split heads need an even count");
  if (c.dim < 1) bad("embedding dimension must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) bad("dropout must be in [0, 1)");
  if (!(c.inverse_temperature > 0.0)) bad("inverse temperature must be positive");
}

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},   {"heads", c.heads},
          {"dim", c.dim},         {"dropout", c.dropout},
          {"path_mode", std::string(to_string(c.path_mode))},
          {"inverse_temperature", c.inverse_temperature}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.path_mode = path_mode_from_string(j.at("path_mode").get<std::string>());
  c.inverse_temperature = j.at("inverse_temperature").get<double>();
  return c;
}

/// FNV-1a over the canonical JSON of the config.
inline std::uint64_t config_hash(const EncoderConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c).dump()) h = (h ^ ch) * 0x100000001b3ull;
  return h;
}

/// True when head h of a layer attends over successors rather than predecessors.
inline bool head_is_inverse(const EncoderConfig& c, std::size_t head) {
  switch (c.path_mode) {
    case PathMode::kForward: return false;
    case PathMode::kInverse: return true;
    case PathMode::kBoth: return head >= c.heads / 2;
  }
  return false;
}

inline std::vector<diff::ParamSpec> policy_param_specs(const EncoderConfig& c) {
  const std::size_t d = c.dim;
  std::vector<diff::ParamSpec> specs{{"embed.W", d, kRawFeatureWidth}, {"embed.b", 1, d}};
  for (std::size_t k = 0; k < c.layers; ++k) {
    const std::string layer = "gcn" + std::to_string(k);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const std::string head = layer + ".head" + std::to_string(h);
      specs.push_back({head + ".W", d, d});
      specs.push_back({head + ".a", 1, d});
      specs.push_back({head + ".b", 1, d});
    }
    specs.push_back({layer + ".update.W", d, c.heads * d});
    specs.push_back({layer + ".update.b", 1, d});
  }
  for (const char* name : {"dec.chosen", "dec.remaining", "dec.context"}) {
    specs.push_back({std::string(name) + ".W", d, d});
    specs.push_back({std::string(name) + ".b", 1, d});
  }
  for (const char* name : {"dec.query.W", "dec.key.W", "dec.value.W", "dec.pointer.W"})
    specs.push_back({name, d, d});
  return specs;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Attention neighborhoods including the self-loop (self first, then neighbors).
inline std::shared_ptr<const diff::Neighborhoods> neighborhoods(const DagTask& task, bool inverse) {
  auto out = std::make_shared<diff::Neighborhoods>(task.size());
  for (NodeId v = 0; v < task.size(); ++v) {
    auto& nb = (*out)[v];
    nb.push_back(v);
    const auto& adj = inverse ? task.successors(v) : task.predecessors(v);
    nb.insert(nb.end(), adj.begin(), adj.end());
  }
  return out;
}

/// Forward/backward context shared by the encoder and decoder of one task.
struct Graph {
  diff::Tape& tape;
  const diff::ParamStore& params;
  bool track_grad = true;

  diff::Var p(const std::string& name) const {
    return params.on(tape, params.index(name), track_grad);
  }
};

/// h0_i = tanh(W x_i + b).
inline diff::Var embed_nodes(const Graph& g, const FeatureMatrix& features) {
  if (features.values.size() != features.rows * kRawFeatureWidth)
    throw Error(ErrorCode::kShapeMismatch, "feature matrix is malformed");
  const diff::Var x = g.tape.constant(diff::Tensor(features.rows, kRawFeatureWidth, features.values));
  return diff::tanh(diff::affine(x, g.p("embed.W"), g.p("embed.b")));
}

/// One attention head: out_i = W sum_{j in N(i)} alpha_ij h_j with
/// alpha_ij = softmax_j(a^T W h_i + b^T W h_j).
inline diff::Var graph_attention_head(const Graph& g, diff::Var h, const std::string& prefix,
                                      std::shared_ptr<const diff::Neighborhoods> nbrs) {
  const diff::Var z = diff::affine(h, g.p(prefix + ".W"));
  const diff::Var query = diff::affine(z, g.p(prefix + ".a"));
  const diff::Var key = diff::affine(z, g.p(prefix + ".b"));
  return diff::neighborhood_attention(z, query, key, std::move(nbrs));
}

/// K rounds of multi-head message passing; the config is not validated here,
/// so layers == 0 simply returns the node embedding.
inline diff::Var encoder_forward(const Graph& g, const DagTask& task, const FeatureMatrix& features,
                                 const EncoderConfig& config, bool training, Rng* rng) {
  if (features.rows != task.size())
    throw Error(ErrorCode::kShapeMismatch, "feature rows do not match node count");
  diff::Var h = embed_nodes(g, features);
  const auto forward_nbrs = neighborhoods(task, false);
  const auto inverse_nbrs = neighborhoods(task, true);
  for (std::size_t k = 0; k < config.layers; ++k) {
    const std::string layer = "gcn" + std::to_string(k);
    std::vector<diff::Var> heads;
    for (std::size_t i = 0; i < config.heads; ++i)
      heads.push_back(graph_attention_head(g, h, layer + ".head" + std::to_string(i),
                                           head_is_inverse(config, i) ? inverse_nbrs : forward_nbrs));
    h = diff::elu(diff::affine(diff::concat_cols(heads), g.p(layer + ".update.W"),
                               g.p(layer + ".update.b")));
    if (training && config.dropout > 0.0) {
      if (!rng) throw Error(ErrorCode::kInvalidParams, "training mode needs an rng for dropout");
      h = diff::dropout(h, config.dropout, true, *rng);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Per-task decoder tensors that do not change across steps.
struct DecoderInputs {
  diff::Var embeddings;     // n x d
  diff::Var chosen_terms;   // tanh(Aff(h_j)) for the chosen-set sum
  diff::Var remaining_terms;
  diff::Var keys;
  diff::Var values;
  diff::Var zero_row;
  std::size_t dim = 0;
};

inline DecoderInputs prepare_decoder(const Graph& g, diff::Var embeddings) {
  DecoderInputs in;
  in.embeddings = embeddings;
  in.dim = embeddings.cols();
  in.chosen_terms = diff::tanh(diff::affine(embeddings, g.p("dec.chosen.W"), g.p("dec.chosen.b")));
  in.remaining_terms =
      diff::tanh(diff::affine(embeddings, g.p("dec.remaining.W"), g.p("dec.remaining.b")));
  in.keys = diff::affine(embeddings, g.p("dec.key.W"));
  in.values = diff::affine(embeddings, g.p("dec.value.W"));
  in.zero_row = g.tape.constant(diff::Tensor(1, in.dim));
  return in;
}

/// Partition of nodes into already-chosen O_t and remaining L_t.
struct DecodeState {
  std::vector<NodeId> chosen;
  std::vector<bool> remaining;  // mask over all nodes
  std::size_t remaining_count = 0;
  std::optional<NodeId> last;
  diff::Var chosen_sum;     // running sum over O_t of chosen_terms rows
  diff::Var remaining_sum;  // running sum over L_t of remaining_terms rows

  std::size_t step() const noexcept { return chosen.size() + 1; }
};

inline DecodeState initial_state(const DecoderInputs& in) {
  const std::size_t n = in.embeddings.rows();
  DecodeState s;
  s.remaining.assign(n, true);
  s.remaining_count = n;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  s.chosen_sum = diff::sum_rows(in.chosen_terms, {});
  s.remaining_sum = diff::sum_rows(in.remaining_terms, std::move(all));
  return s;
}

inline void advance(DecodeState& s, const DecoderInputs& in, NodeId v) {
  s.chosen.push_back(v);
  s.remaining[v] = false;
  --s.remaining_count;
  s.last = v;
  s.chosen_sum = diff::add(s.chosen_sum, diff::row(in.chosen_terms, v));
  s.remaining_sum = diff::add(s.remaining_sum, diff::scale(diff::row(in.remaining_terms, v), -1.0));
}

/// Selection distribution over all n nodes (exactly zero outside L_t):
///   c_t   = Aff(tanh(sum_O) + tanh(sum_L) + tanh(h_last))
///   g_t   = W_v sum_{j in L_t} softmax_j((W_q c_t) . (W_k h_j) / sqrt(d)) h_j
///   logit = C tanh(h_i^T W_p g_t)
inline diff::Var decode_step(const Graph& g, const DecoderInputs& in, const DecodeState& s,
                             double inverse_temperature) {
  if (s.remaining_count == 0) throw Error(ErrorCode::kEmptyRemainder, "no nodes left to choose");
  const std::size_t n = in.embeddings.rows();
  const diff::Var e_last = s.last ? diff::tanh(diff::row(in.embeddings, *s.last)) : in.zero_row;
  const diff::Var ctx_in =
      diff::add(diff::add(diff::tanh(s.chosen_sum), diff::tanh(s.remaining_sum)), e_last);
  const diff::Var context = diff::affine(ctx_in, g.p("dec.context.W"), g.p("dec.context.b"));
  const diff::Var query = diff::affine(context, g.p("dec.query.W"));
  const diff::Var scores =
      diff::scale(diff::affine(in.keys, query), 1.0 / std::sqrt(static_cast<double>(in.dim)));
  const diff::Var alpha = diff::masked_softmax(scores, s.remaining);
  const diff::Var glimpse = diff::matmul(diff::reshape(alpha, 1, n), in.values);
  const diff::Var pointer = diff::affine(glimpse, g.p("dec.pointer.W"));
  const diff::Var logits =
      diff::scale(diff::tanh(diff::affine(in.embeddings, pointer)), inverse_temperature);
  return diff::masked_softmax(logits, s.remaining);
}

enum class DecodeMode { kGreedy, kSample, kForced };

struct DecodeOutput {
  PriorityOrder order;
  diff::Var log_prob;  // 1 x 1 on the tape
  std::vector<diff::Var> step_probs;
};

/// Runs n decode steps. kForced replays `forced` (teacher forcing) and is the
/// way to recompute log p(order | task).
inline DecodeOutput decode(const Graph& g, const DecoderInputs& in, DecodeMode mode,
                           double inverse_temperature, Rng* rng = nullptr,
                           const PriorityOrder* forced = nullptr, bool keep_probs = false) {
  const std::size_t n = in.embeddings.rows();
  if (mode == DecodeMode::kSample && !rng)
    throw Error(ErrorCode::kInvalidParams, "stochastic decoding needs an rng");
  if (mode == DecodeMode::kForced && (!forced || !forced->is_permutation_of(n)))
    throw Error(ErrorCode::kInvalidOrder, "forced order is not a permutation");

  DecodeState state = initial_state(in);
  std::vector<NodeId> perm;
  perm.reserve(n);
  std::vector<diff::Var> log_terms;
  DecodeOutput out;
  for (std::size_t t = 0; t < n; ++t) {
    const diff::Var probs = decode_step(g, in, state, inverse_temperature);
    const diff::Tensor& p = probs.value();
    NodeId choice = n;
    switch (mode) {
      case DecodeMode::kGreedy: {
        double best = -1.0;
        for (NodeId v = 0; v < n; ++v)
          if (state.remaining[v] && p[v] > best) best = p[v], choice = v;
        break;
      }
      case DecodeMode::kSample: {
        const double u = uniform01(*rng);
        double acc = 0.0;
        for (NodeId v = 0; v < n; ++v) {
          if (!state.remaining[v]) continue;
          choice = v;  // last remaining node absorbs round-off
          acc += p[v];
          if (u < acc) break;
        }
        break;
      }
      case DecodeMode::kForced: choice = (*forced)[t]; break;
    }
    log_terms.push_back(diff::log(diff::pick(probs, choice)));
    if (keep_probs) out.step_probs.push_back(probs);
    perm.push_back(choice);
    advance(state, in, choice);
  }
  diff::Var total = log_terms.front();
  for (std::size_t t = 1; t < log_terms.size(); ++t) total = diff::add(total, log_terms[t]);
  out.order = PriorityOrder(std::move(perm));
  out.log_prob = total;
  return out;
}

// ---------------------------------------------------------------------------
// Policy = config + parameters
// ---------------------------------------------------------------------------

class Policy {
 public:
  Policy(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    validate(config_);
    params_ = diff::init_params(policy_param_specs(config_), config_.dim, seed);
  }
  Policy(const EncoderConfig& config, diff::ParamStore params)
      : config_(config), params_(std::move(params)) {
    validate(config_);
  }

  const EncoderConfig& config() const noexcept { return config_; }
  const diff::ParamStore& params() const noexcept { return params_; }
  diff::ParamStore& params() noexcept { return params_; }

  struct Run {
    DecodeOutput decode;
    diff::Var embeddings;
  };

  /// Full forward pass on `tape`. Dropout is active only when training.
  Run run(diff::Tape& tape, const DagTask& task, DecodeMode mode, Rng* rng, bool training,
          bool track_grad, const PriorityOrder* forced = nullptr, bool keep_probs = false) const {
    const Graph g{tape, params_, track_grad};
    const FeatureMatrix features = raw_features(task);
    const diff::Var h = encoder_forward(g, task, features, config_, training, rng);
    const DecoderInputs in = prepare_decoder(g, h);
    return {decode(g, in, mode, config_.inverse_temperature, rng, forced, keep_probs), h};
  }

  PriorityOrder greedy_order(const DagTask& task) const {
    diff::Tape tape;
    return run(tape, task, DecodeMode::kGreedy, nullptr, false, false).decode.order;
  }

  PriorityOrder sample_order(const DagTask& task, Rng& rng) const {
    diff::Tape tape;
    return run(tape, task, DecodeMode::kSample, &rng, false, false).decode.order;
  }

  /// log p(order | task) at inference (no dropout).
  double log_prob(const DagTask& task, const PriorityOrder& order) const {
    diff::Tape tape;
    return run(tape, task, DecodeMode::kForced, nullptr, false, false, &order)
        .decode.log_prob.value()[0];
  }

 private:
  EncoderConfig config_;
  diff::ParamStore params_;
};

inline nlohmann::ordered_json to_json(const Policy& policy) {
  nlohmann::ordered_json j;
  j["encoder_config"] = to_json(policy.config());
  j["params"] = diff::to_json(policy.params());
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const Policy& policy,
                            const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json j = to_json(policy);
  if (!extra.is_null()) j["meta"] = extra;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "checkpoint write failed");
}

inline Policy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "no checkpoint at " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return Policy(encoder_config_from_json(j.at("encoder_config")),
                  diff::param_store_from_json(j.at("params")));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + ex.what());
  }
}

}  // namespace gosu
