#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <array>
#include <filesystem>
#include <numeric>
#include <set>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gosu/dag.hpp"
#include "gosu/error.hpp"
#include "gosu/rng.hpp"

namespace gosu {

struct IntRange {
  std::int64_t min = 0;
  std::int64_t max = 0;

  bool operator==(const IntRange&) const = default;
};

/// Nested fork-join generation parameters.
struct GenParams {
  IntRange depth_range{2, 5};
  IntRange child_range{2, 5};
  double p_fork = 0.5;
  double p_pert = 0.05;
  Time total_workload = 10000;
  std::uint64_t seed = 0;

  bool operator==(const GenParams&) const = default;
};

inline void validate(const GenParams& p) {
  auto bad = [](const char* what) { throw Error(ErrorCode::kInvalidParams, what); };
  if (!(p.p_fork >= 0.0 && p.p_fork <= 1.0)) bad("p_fork must be in [0, 1]");
  if (!(p.p_pert >= 0.0 && p.p_pert <= 1.0)) bad("p_pert must be in [0, 1]");
  if (p.depth_range.min < 1 || p.depth_range.max < p.depth_range.min) bad("bad depth range");
  if (p.child_range.min < 1 || p.child_range.max < p.child_range.min) bad("bad child range");
  if (p.total_workload < 2) bad("total_workload must be >= 2");
}

inline GenParams preset(std::string_view name) {
  GenParams p;
  if (name == "low") {
    p.depth_range = {2, 5};
    p.child_range = {2, 5};
    p.p_fork = 0.5;
    p.p_pert = 0.05;
  } else if (name == "moderate") {
    p.depth_range = {3, 5};
    p.child_range = {2, 5};
    p.p_fork = 0.5;
    p.p_pert = 0.1;
  } else if (name == "high") {
    p.depth_range = {3, 6};
    p.child_range = {2, 6};
    p.p_fork = 0.5;
    p.p_pert = 0.15;
  } else {
    throw Error(ErrorCode::kUnknownPreset, "unknown preset '" + std::string(name) + "'");
  }
  return p;
}

inline void to_json(nlohmann::ordered_json& j, const GenParams& p) {
  j = nlohmann::ordered_json{
      {"depth_range", {p.depth_range.min, p.depth_range.max}},
      {"child_range", {p.child_range.min, p.child_range.max}},
      {"p_fork", p.p_fork},
      {"p_pert", p.p_pert},
      {"total_workload", p.total_workload},
      {"seed", p.seed},
  };
}

inline GenParams gen_params_from_json(const nlohmann::json& j) {
  GenParams p;
  p.depth_range = {j.at("depth_range").at(0).get<std::int64_t>(),
                   j.at("depth_range").at(1).get<std::int64_t>()};
  p.child_range = {j.at("child_range").at(0).get<std::int64_t>(),
                   j.at("child_range").at(1).get<std::int64_t>()};
  p.p_fork = j.at("p_fork").get<double>();
  p.p_pert = j.at("p_pert").get<double>();
  p.total_workload = j.at("total_workload").get<Time>();
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

/// Splits `total` into positive integers proportional to `weights` using
/// largest-remainder rounding. Requires total >= weights.size().
inline std::vector<Time> apportion(const std::vector<std::int64_t>& weights, Time total) {
  const std::size_t n = weights.size();
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<Time> out(n);
  std::vector<double> frac(n);
  Time assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    const double fl = std::floor(q);
    out[i] = std::max<Time>(1, static_cast<Time>(fl));
    frac[i] = out[i] > static_cast<Time>(fl) ? -1.0 : q - fl;
    assigned += out[i];
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (assigned < total) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % n, ++assigned) ++out[idx[k]];
  } else {
    // Minimum-one clamping overshot; take units back from the largest shares.
    while (assigned > total) {
      const auto it = std::max_element(out.begin(), out.end());
      --*it;
      --assigned;
    }
  }
  return out;
}

struct GeneratedTask {
  DagTask task;
  /// Fork-join layer of every node; the sink gets one past the deepest layer.
  std::vector<std::size_t> layer;
  /// Edges created by forking and perturbation, before sink hookup.
  std::vector<Edge> layered_edges;
};

inline constexpr int kGenerationRetries = 100;

inline GeneratedTask generate_layered(const GenParams& params, Rng& rng) {
  validate(params);
  for (int attempt = 0; attempt < kGenerationRetries; ++attempt) {
    const auto depth = uniform_int(rng, params.depth_range.min, params.depth_range.max);
    std::vector<std::size_t> layer_of{0};
    std::vector<std::vector<NodeId>> layers{{0}};
    std::vector<Edge> edges;
    std::set<Edge> present;

    for (std::int64_t k = 0; k < depth; ++k) {
      std::vector<NodeId> next;
      for (NodeId u : layers.back()) {
        if (uniform01(rng) >= params.p_fork) continue;
        const auto children = uniform_int(rng, params.child_range.min, params.child_range.max);
        for (std::int64_t c = 0; c < children; ++c) {
          const NodeId v = layer_of.size();
          layer_of.push_back(static_cast<std::size_t>(k + 1));
          next.push_back(v);
          edges.emplace_back(u, v);
          present.emplace(u, v);
        }
      }
      if (next.empty()) break;
      for (NodeId u : layers.back())
        for (NodeId v : next)
          if (!present.count({u, v}) && uniform01(rng) < params.p_pert) {
            edges.emplace_back(u, v);
            present.emplace(u, v);
          }
      layers.push_back(std::move(next));
    }

    const std::vector<Edge> layered_edges = edges;
    const NodeId sink = layer_of.size();
    std::vector<bool> has_child(sink, false);
    for (const Edge& e : edges) has_child[e.first] = true;
    for (NodeId v = 0; v < sink; ++v)
      if (!has_child[v]) edges.emplace_back(v, sink);
    layer_of.push_back(layers.size());

    const std::size_t n = layer_of.size();
    if (n < 2 || static_cast<Time>(n) > params.total_workload) continue;

    std::vector<std::int64_t> weights(n);
    for (auto& w : weights) w = uniform_int(rng, 1, 100);
    const std::vector<Time> wcets = apportion(weights, params.total_workload);
    RawGraph raw;
    raw.edges = std::move(edges);
    for (Time c : wcets) raw.nodes.push_back({c, false});
    return GeneratedTask{normalize(raw), std::move(layer_of), layered_edges};
  }
  throw Error(ErrorCode::kDegenerateGraph, "generation kept producing degenerate graphs");
}

inline DagTask generate_task(const GenParams& params, Rng& rng) {
  return generate_layered(params, rng).task;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

struct SplitSizes {
  std::size_t train = 8000;
  std::size_t validation = 1000;
  std::size_t test = 1000;
};

struct DatasetSplit {
  std::vector<DagTask> train;
  std::vector<DagTask> validation;
  std::vector<DagTask> test;
};

struct Manifest {
  int format_version = kDatasetFormatVersion;
  std::string preset;  // empty for custom parameters
  GenParams params;
  std::uint64_t seed = 0;
  SplitSizes sizes;
  std::size_t processors = 4;
};

inline constexpr std::array<std::string_view, 3> kSplitFiles = {"train.jsonl", "val.jsonl",
                                                                "test.jsonl"};

inline DatasetSplit generate_dataset(const GenParams& params, const SplitSizes& sizes,
                                     std::uint64_t seed) {
  if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0)
    throw Error(ErrorCode::kInvalidParams, "split sizes must be positive");
  DatasetSplit out;
  const std::array<std::pair<std::vector<DagTask>*, std::size_t>, 3> splits = {
      {{&out.train, sizes.train}, {&out.validation, sizes.validation}, {&out.test, sizes.test}}};
  for (std::uint64_t s = 0; s < splits.size(); ++s) {
    auto& [dest, count] = splits[s];
    dest->reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      Rng rng = make_rng(seed, {s, i});
      dest->push_back(generate_task(params, rng));
    }
  }
  return out;
}

inline void write_tasks(const std::filesystem::path& path, const std::vector<DagTask>& tasks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  for (const DagTask& t : tasks) out << to_json_line(t) << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

inline std::vector<DagTask> read_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<DagTask> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    tasks.push_back(from_json_line(line));
  }
  return tasks;
}

inline nlohmann::ordered_json manifest_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["preset"] = m.preset;
  j["params"] = m.params;
  j["seed"] = m.seed;
  j["sizes"] = {{"train", m.sizes.train}, {"val", m.sizes.validation}, {"test", m.sizes.test}};
  j["m"] = m.processors;
  return j;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    Manifest m;
    m.format_version = j.at("format_version").get<int>();
    m.preset = j.value("preset", std::string{});
    m.params = gen_params_from_json(j.at("params"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.sizes = {j.at("sizes").at("train").get<std::size_t>(),
               j.at("sizes").at("val").get<std::size_t>(),
               j.at("sizes").at("test").get<std::size_t>()};
    m.processors = j.value("m", std::size_t{4});
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("manifest: ") + ex.what());
  }
}

/// Generates a split deterministically from `seed` and writes
/// {train,val,test}.jsonl plus manifest.json into `dir`.
inline DatasetSplit build_dataset(const std::filesystem::path& dir, Manifest manifest) {
  manifest.params.seed = manifest.seed;
  DatasetSplit split = generate_dataset(manifest.params, manifest.sizes, manifest.seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + dir.string());
  write_tasks(dir / kSplitFiles[0], split.train);
  write_tasks(dir / kSplitFiles[1], split.validation);
  write_tasks(dir / kSplitFiles[2], split.test);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write manifest");
  out << manifest_json(manifest).dump(2) << '\n';
  return split;
}

inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw Error(ErrorCode::kMissingArtifact, "no dataset at " + dir.string());
  return {read_tasks(dir / kSplitFiles[0]), read_tasks(dir / kSplitFiles[1]),
          read_tasks(dir / kSplitFiles[2])};
}

}  // namespace gosu
