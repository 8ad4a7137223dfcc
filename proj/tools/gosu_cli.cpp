// gosu: dataset generation, simulation, training, evaluation and analysis.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gosu/analysis.hpp"
#include "gosu/experiment.hpp"
#include "gosu/heuristics.hpp"
#include "gosu/policy.hpp"
#include "gosu/sim.hpp"
#include "gosu/taskgen.hpp"
#include "gosu/train.hpp"

namespace fs = std::filesystem;
using namespace gosu;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  fs::path out = ".";
  std::size_t m = 4;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  return f;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidParams, "bad integer list '" + text + "'");
    }
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

const std::vector<DagTask>& pick_split(const DatasetSplit& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.validation;
  if (name == "test") return d.test;
  throw Error(ErrorCode::kInvalidParams, "unknown split '" + name + "'");
}

// Options shared by train and ablate.
struct TrainOptions {
  fs::path dataset;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 1e-4;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::string path_mode = "both";
  double alpha = 0.01;
  std::size_t train_limit = 0;

  void attach(CLI::App* cmd, bool with_mode) {
    cmd->add_option("--dataset", dataset, "dataset directory")->required();
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch_size, "tasks per update");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--dim", dim, "embedding width d");
    cmd->add_option("--layers", layers, "encoder layers K");
    cmd->add_option("--heads", heads, "attention heads H");
    cmd->add_option("--dropout", dropout, "encoder dropout");
    cmd->add_option("--alpha", alpha, "baseline refresh t-test level");
    cmd->add_option("--train-limit", train_limit, "use only the first N training tasks (0 = all)");
    if (with_mode) cmd->add_option("--path-mode", path_mode, "both | forward | inverse");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.encoder.dim = dim;
    c.encoder.layers = layers;
    c.encoder.heads = heads;
    c.encoder.dropout = dropout;
    c.encoder.path_mode = path_mode_from_string(path_mode);
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.adam.learning_rate = lr;
    c.t_test_alpha = alpha;
    c.seed = seed;
    validate(c);
    return c;
  }

  DatasetSplit load() const {
    DatasetSplit d = load_dataset(dataset);
    if (train_limit > 0 && d.train.size() > train_limit)
      d.train.erase(d.train.begin() + static_cast<std::ptrdiff_t>(train_limit), d.train.end());
    return d;
  }

  std::vector<std::pair<std::string, std::string>> header(const Globals& g) const {
    return {{"seed", std::to_string(g.seed)},     {"m", std::to_string(g.m)},
            {"dataset", dataset.string()},        {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)}, {"lr", std::to_string(lr)},
            {"dim", std::to_string(dim)},         {"layers", std::to_string(layers)},
            {"heads", std::to_string(heads)},     {"dropout", std::to_string(dropout)},
            {"path_mode", path_mode},             {"alpha", std::to_string(alpha)},
            {"train_limit", std::to_string(train_limit)}};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Priority assignment for DAG tasks under global fixed-priority scheduling"};
  app.set_config("--config", "", "TOML/INI file mirroring the flags (flags win)");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "root seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--m", g.m, "processor count")->capture_default_str();

  // generate
  std::string preset_name = "low";
  std::string sizes_text = "8000,1000,1000";
  auto* gen = app.add_subcommand("generate", "build a dataset from a preset");
  gen->add_option("--preset", preset_name, "low | moderate | high");
  gen->add_option("--sizes", sizes_text, "train,val,test counts");

  // simulate
  fs::path sim_dataset, sim_orders, sim_trace, sim_emit;
  std::string sim_split = "test", sim_policy = "topological";
  std::size_t sim_trace_task = 0;
  auto* sim = app.add_subcommand("simulate", "simulate priority orders on a dataset split");
  sim->add_option("--dataset", sim_dataset, "dataset directory")->required();
  sim->add_option("--split", sim_split, "train | val | test");
  sim->add_option("--policy", sim_policy, "heuristic name or gosu:<checkpoint>");
  sim->add_option("--orders", sim_orders, "JSONL of {task_id, perm} overriding --policy");
  sim->add_option("--trace", sim_trace, "write the schedule of one task as CSV");
  sim->add_option("--trace-task", sim_trace_task, "task index for --trace");
  sim->add_option("--emit-orders", sim_emit, "write the simulated orders as JSONL {task_id, perm}");

  // train
  TrainOptions topt;
  auto* tr = app.add_subcommand("train", "REINFORCE training with a greedy rollout baseline");
  topt.attach(tr, true);

  // evaluate
  fs::path ev_dataset;
  std::vector<std::string> ev_policies{"random", "topological", "critical_path_first", "longest_tail_first"};
  std::string ev_ms = "2,3,4,6,8", ev_split = "test";
  double ev_margin = 0.01;
  auto* ev = app.add_subcommand("evaluate", "mean slowdown and win/tie/loss tables");
  ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
  ev->add_option("--policy", ev_policies, "policies to compare (repeatable)");
  ev->add_option("--ms", ev_ms, "comma-separated processor counts");
  ev->add_option("--margin", ev_margin, "relative makespan margin for a win");
  ev->add_option("--split", ev_split, "train | val | test");

  // ablate
  TrainOptions aopt;
  auto* ab = app.add_subcommand("ablate", "train forward, inverse and split head directions");
  aopt.attach(ab, false);

  // analyze
  std::vector<fs::path> an_datasets, an_checkpoints;
  std::string an_split_fit = "train", an_split_eval = "test";
  std::size_t an_fit_limit = 1000, an_steps = 1000;
  double an_eps = 1e-3, an_l1 = 3.0, an_lr = 0.01;
  auto* an = app.add_subcommand("analyze", "fit a linear soft-rank imitation of a checkpoint");
  an->add_option("--dataset", an_datasets, "dataset directories (repeatable)")->required();
  an->add_option("--checkpoint", an_checkpoints, "one checkpoint per dataset")->required();
  an->add_option("--fit-limit", an_fit_limit, "fit on the first N tasks of the fit split");
  an->add_option("--epsilon", an_eps, "soft-rank temperature");
  an->add_option("--l1", an_l1, "L1 strength on w");
  an->add_option("--steps", an_steps, "optimizer steps");
  an->add_option("--lr", an_lr, "optimizer step size");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string seed_s = std::to_string(g.seed);
    if (*gen) {
      const auto sizes = parse_list(sizes_text);
      if (sizes.size() != 3) throw Error(ErrorCode::kInvalidParams, "--sizes needs train,val,test");
      Manifest man;
      man.preset = preset_name;
      man.params = preset(preset_name);
      man.seed = g.seed;
      man.sizes = {sizes[0], sizes[1], sizes[2]};
      man.processors = g.m;
      const DatasetSplit d = build_dataset(g.out, man);
      auto f = open_out(g.out / "summary.csv");
      write_csv_header_comment(f, "generate", {{"seed", seed_s}, {"preset", preset_name}, {"sizes", join(sizes)}});
      f << "split,tasks,mean_nodes,mean_critical_ratio\n";
      f.precision(10);
      const std::array<std::pair<const char*, const std::vector<DagTask>*>, 3> splits = {
          {{"train", &d.train}, {"val", &d.validation}, {"test", &d.test}}};
      for (const auto& [name, tasks] : splits) {
        double nodes = 0, ratio = 0;
        for (const DagTask& t : *tasks) {
          nodes += static_cast<double>(t.size());
          ratio += static_cast<double>(t.stats().critical_workload) / static_cast<double>(t.stats().total_workload);
        }
        const double k = static_cast<double>(tasks->size());
        f << name << ',' << tasks->size() << ',' << nodes / k << ',' << ratio / k << '\n';
      }
    } else if (*sim) {
      const DatasetSplit d = load_dataset(sim_dataset);
      const std::vector<DagTask>& tasks = pick_split(d, sim_split);
      std::vector<PriorityOrder> orders;
      if (!sim_orders.empty()) {
        orders.assign(tasks.size(), PriorityOrder{});
        std::vector<bool> seen(tasks.size(), false);
        std::ifstream in(sim_orders, std::ios::binary);
        if (!in) throw Error(ErrorCode::kMissingArtifact, "no orders file " + sim_orders.string());
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          try {
            const auto j = nlohmann::json::parse(line);
            const auto id = j.at("task_id").get<std::size_t>();
            if (id >= tasks.size()) throw Error(ErrorCode::kInvalidOrder, "task_id out of range");
            orders[id] = PriorityOrder(j.at("perm").get<std::vector<NodeId>>());
            seen[id] = true;
          } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::kParseError, std::string("orders: ") + ex.what());
          }
        }
        for (std::size_t i = 0; i < tasks.size(); ++i)
          if (!seen[i]) throw Error(ErrorCode::kInvalidOrder, "no order for task " + std::to_string(i));
      } else {
        const PolicySpec spec = PolicySpec::parse(sim_policy);
        for (std::size_t i = 0; i < tasks.size(); ++i) orders.push_back(spec.order(tasks[i], i, g.seed));
      }
      auto f = open_out(g.out / "simulate.csv");
      write_csv_header_comment(f, "simulate", {{"seed", seed_s}, {"m", std::to_string(g.m)},
                                               {"split", sim_split},
                                               {"policy", sim_orders.empty() ? sim_policy : "orders-file"}});
      f << "task_id,makespan,lower_bound,slowdown\n";
      f.precision(10);
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Time ms = makespan(tasks[i], orders[i], g.m);
        const Time lb = lower_bound(tasks[i], g.m);
        f << i << ',' << ms << ',' << lb << ',' << static_cast<double>(ms) / static_cast<double>(lb) << '\n';
      }
      if (!sim_emit.empty()) {
        auto o = open_out(sim_emit);
        for (std::size_t i = 0; i < tasks.size(); ++i)
          o << nlohmann::ordered_json{{"task_id", i}, {"perm", orders[i].perm()}}.dump() << '\n';
      }
      if (!sim_trace.empty()) {
        if (sim_trace_task >= tasks.size()) throw Error(ErrorCode::kInvalidParams, "--trace-task out of range");
        auto t = open_out(sim_trace);
        write_csv_header_comment(t, "simulate-trace", {{"seed", seed_s}, {"m", std::to_string(g.m)},
                                                       {"task", std::to_string(sim_trace_task)}});
        write_trace_csv(t, simulate(tasks[sim_trace_task], orders[sim_trace_task], g.m));
      }
    } else if (*tr) {
      const TrainConfig cfg = topt.config(g.seed);
      const DatasetSplit d = topt.load();
      std::vector<EpochLog> log;
      Policy policy(cfg.encoder, cfg.seed);
      std::size_t refreshes = 0;
      if (cfg.epochs > 0) {
        TrainResult r = train(d, cfg, g.m, [](const EpochLog& e, const Policy&) {
          std::cerr << "epoch " << e.epoch << " train " << e.train_mean_slowdown << " val " << e.val_target_slowdown
                    << (e.refreshed ? " refreshed" : "") << '\n';
          return true;
        });
        policy = std::move(r.policy);
        log = std::move(r.log);
        refreshes = r.refreshes;
      }
      fs::create_directories(g.out);
      save_checkpoint(g.out / "checkpoint.json", policy,
                      {{"seed", g.seed}, {"m", g.m}, {"epochs", cfg.epochs}, {"refreshes", refreshes}});
      auto f = open_out(g.out / "train_log.csv");
      write_csv_header_comment(f, "train", topt.header(g));
      write_training_log(f, log);
    } else if (*ev) {
      const DatasetSplit d = load_dataset(ev_dataset);
      ExperimentConfig cfg;
      cfg.processors = parse_list(ev_ms);
      cfg.policies = ev_policies;
      cfg.margin = ev_margin;
      cfg.seed = g.seed;
      std::vector<PolicySpec> specs;
      for (const std::string& p : ev_policies) specs.push_back(PolicySpec::parse(p));
      const EvaluationResult r = evaluate(pick_split(d, ev_split), specs, cfg);
      std::string names;
      for (const std::string& p : ev_policies) names += (names.empty() ? "" : ";") + p;
      const std::vector<std::pair<std::string, std::string>> header = {
          {"seed", seed_s}, {"ms", join(cfg.processors)}, {"split", ev_split},
          {"margin", std::to_string(ev_margin)}, {"policies", names}};
      auto s = open_out(g.out / "slowdown.csv");
      write_csv_header_comment(s, "evaluate", header);
      write_slowdown_csv(s, r.slowdowns);
      auto p = open_out(g.out / "pairs.csv");
      write_csv_header_comment(p, "evaluate", header);
      write_pairs_csv(p, r.pairs);
    } else if (*ab) {
      const TrainConfig cfg = aopt.config(g.seed);
      const DatasetSplit d = aopt.load();
      const std::vector<AblationRow> rows = ablate(d, cfg, g.m);
      fs::create_directories(g.out);
      for (const AblationRow& row : rows)
        save_checkpoint(g.out / ("checkpoint_" + std::string(to_string(row.mode)) + ".json"), row.policy,
                        {{"seed", g.seed}, {"m", g.m}, {"epochs", cfg.epochs}});
      auto f = open_out(g.out / "ablation.csv");
      write_csv_header_comment(f, "ablate", aopt.header(g));
      write_ablation_csv(f, rows);
    } else if (*an) {
      if (an_datasets.size() != an_checkpoints.size())
        throw Error(ErrorCode::kInvalidParams, "one --checkpoint per --dataset");
      SoftRankConfig cfg;
      cfg.epsilon = an_eps;
      cfg.l1_strength = an_l1;
      cfg.steps = an_steps;
      cfg.learning_rate = an_lr;
      fs::create_directories(g.out);
      auto csv = open_out(g.out / "imitation_weights.csv");
      write_csv_header_comment(csv, "analyze", {{"seed", seed_s}, {"m", std::to_string(g.m)},
                                                {"epsilon", std::to_string(an_eps)}, {"l1", std::to_string(an_l1)},
                                                {"steps", std::to_string(an_steps)}});
      csv << "preset,exec_time,out_degree,in_degree,is_critical,bias,slowdown_ratio_vs_policy\n";
      csv.precision(10);
      for (std::size_t k = 0; k < an_datasets.size(); ++k) {
        const Manifest man = read_manifest(an_datasets[k]);
        DatasetSplit d = load_dataset(an_datasets[k]);
        std::vector<DagTask> fit = pick_split(d, an_split_fit);
        if (an_fit_limit > 0 && fit.size() > an_fit_limit)
          fit.erase(fit.begin() + static_cast<std::ptrdiff_t>(an_fit_limit), fit.end());
        const Policy teacher = load_checkpoint(an_checkpoints[k]);
        const ImitationReport rep = fit_imitation(
            fit, pick_split(d, an_split_eval), [&](const DagTask& t) { return teacher.greedy_order(t); }, g.m, cfg);
        const std::string label = man.preset.empty() ? "custom" + std::to_string(k) : man.preset;
        auto j = open_out(g.out / ("imitation_" + label + ".json"));
        j << to_json(rep).dump(2) << '\n';
        csv << label;
        for (double w : rep.scorer.w) csv << ',' << w;
        csv << ',' << rep.scorer.b << ',' << rep.slowdown_ratio_vs_policy << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
