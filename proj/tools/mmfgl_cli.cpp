// Command-line front end: dataset generation, partitioning, single runs,
// matrix sweeps, scaling measurements, and plot-ready exports.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmfgl/bundle.hpp"
#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"
#include "mmfgl/runner.hpp"

namespace {

using mmfgl::ConfigError;

std::string slurp_file(const std::string& path) {
  std::ifstream ifs(path, std::ios::binary);
  if (!ifs) throw mmfgl::MissingFileError("cannot open " + path);
  std::ostringstream buf;
  buf << ifs.rdbuf();
  return buf.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = std::stoull(tok, &used);
    if (used != tok.size()) throw ConfigError("bad seed list entry: " + tok);
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

// Overrides --seeds inside the raw config text so matrix expansion still
// sees one consistent document.
std::string override_seeds(const std::string& json_text, const std::vector<std::uint64_t>& seeds) {
  nlohmann::json root = nlohmann::json::parse(json_text, nullptr, false);
  if (root.is_discarded() || !root.is_object())
    throw ConfigError("config is not a JSON object");
  root["seeds"] = seeds;
  return root.dump();
}

void report_summary(const mmfgl::ResultsTable& table) {
  std::size_t failed = 0;
  for (const mmfgl::RawRow& row : table.raw) failed += row.failed ? 1 : 0;
  std::printf("%zu raw rows (%zu failed), %zu summary rows\n", table.raw.size(), failed,
              table.summary.size());
  for (const mmfgl::SummaryRow& row : table.summary) {
    std::printf("  %s %s %s ratio=%g final=%.4f+-%.4f best=%.4f conv@%d (%zu seeds)\n",
                row.scenario.c_str(), row.algorithm.c_str(), row.metric.c_str(), row.ratio,
                row.final_mean, row.final_std, row.best_mean, row.convergence_round,
                row.num_seeds);
  }
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            const std::string& seeds_arg) {
  mmfgl::ExperimentConfig cfg = mmfgl::load_config(config_path);
  std::uint64_t seed = seeds_arg.empty() ? cfg.seeds.front() : parse_seed_list(seeds_arg).front();
  mmfgl::MultimodalGraph graph = mmfgl::build_dataset(cfg.dataset, seed);
  mmfgl::save_bundle(graph, out_dir);
  std::printf("wrote %s: %zu nodes, %zu edges, %zu modalities, %d classes\n", out_dir.c_str(),
              graph.num_nodes, graph.edges.size(), graph.modalities.size(), graph.num_classes);
  return 0;
}

int cmd_partition(const std::string& config_path, const std::string& out_dir,
                  const std::string& seeds_arg) {
  mmfgl::ExperimentConfig cfg = mmfgl::load_config(config_path);
  std::uint64_t seed = seeds_arg.empty() ? cfg.seeds.front() : parse_seed_list(seeds_arg).front();
  mmfgl::MultimodalGraph graph = mmfgl::build_dataset(cfg.dataset, seed);
  mmfgl::ScenarioConfig scenario = cfg.scenario;
  scenario.master_seed = mmfgl::derive_seed(seed, "scenario");
  mmfgl::PartitionResult part = mmfgl::build_scenario(graph, scenario);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream ofs(out_dir + "/assignment.tsv");
    ofs << "node_id\tclient_id\n";
    for (std::size_t i = 0; i < part.assignment.size(); ++i)
      ofs << i << "\t" << part.assignment[i] << "\n";
  }
  for (const mmfgl::ClientShard& shard : part.shards) {
    std::string shard_dir = out_dir + "/client_" + std::to_string(shard.client_id);
    mmfgl::save_bundle(shard.graph, shard_dir);
    std::ofstream ofs(shard_dir + "/splits.tsv");
    ofs << "global_id\tsplit\n";
    for (std::size_t i = 0; i < shard.node_global_ids.size(); ++i) {
      const char* split = shard.train_mask[i] ? "train" : shard.val_mask[i] ? "val" : "test";
      ofs << shard.node_global_ids[i] << "\t" << split << "\n";
    }
  }
  std::printf("wrote %zu client shards under %s\n", part.shards.size(), out_dir.c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::string& seeds_arg) {
  mmfgl::ExperimentConfig cfg = mmfgl::load_config(config_path);
  if (!seeds_arg.empty()) cfg.seeds = parse_seed_list(seeds_arg);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  mmfgl::ResultsTable table = mmfgl::run_experiment(cfg);
  mmfgl::write_results(table, cfg.output_dir);
  report_summary(table);
  std::printf("results in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              const std::string& seeds_arg, int workers) {
  std::string text = slurp_file(config_path);
  if (!seeds_arg.empty()) text = override_seeds(text, parse_seed_list(seeds_arg));
  mmfgl::ResultsTable table = mmfgl::run_matrix(text, workers);
  std::string dir = out_dir.empty() ? "out" : out_dir;
  mmfgl::write_results(table, dir);
  report_summary(table);
  std::printf("results in %s\n", dir.c_str());
  return 0;
}

int cmd_scaling(const std::string& config_path, const std::string& out_dir) {
  nlohmann::json root = nlohmann::json::parse(slurp_file(config_path), nullptr, false);
  if (root.is_discarded() || !root.is_object())
    throw ConfigError("scaling config is not a JSON object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& k = it.key();
    if (k != "axis" && k != "grid" && k != "base_n" && k != "base_m" && k != "base_f" &&
        k != "reps" && k != "seed")
      throw ConfigError("unknown scaling config key $." + k);
  }
  std::string axis = root.value("axis", std::string("f"));
  if (axis.size() != 1) throw ConfigError("scaling axis must be n, m, or f");
  std::vector<std::size_t> grid;
  if (!root.contains("grid") || !root["grid"].is_array())
    throw ConfigError("scaling config needs a grid array");
  for (const auto& v : root["grid"]) grid.push_back(v.get<std::size_t>());
  std::size_t base_n = root.value("base_n", std::size_t{200});
  std::size_t base_m = root.value("base_m", std::size_t{2000});
  std::size_t base_f = root.value("base_f", std::size_t{8});
  int reps = root.value("reps", 5);
  std::uint64_t seed = root.value("seed", std::uint64_t{1});

  mmfgl::ScalingFit fit =
      mmfgl::measure_scaling(axis[0], grid, base_n, base_m, base_f, reps, seed);

  std::string dir = out_dir.empty() ? "out" : out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir + "/scaling.csv");
  csv << "value,n,m,f,ms\n";
  for (const mmfgl::ScalingPoint& p : fit.points)
    csv << p.value << "," << p.n << "," << p.m << "," << p.f << "," << p.ms << "\n";
  std::printf("axis %c: slope %.3f +- %.3f over %zu points; wrote %s/scaling.csv\n", fit.axis,
              fit.slope, fit.ci_half, fit.points.size(), dir.c_str());
  return 0;
}

int cmd_plotdata(const std::string& raw_path, const std::string& x, const std::string& series,
                 const std::string& metric, const std::string& out_file) {
  mmfgl::ResultsTable table;
  table.raw = mmfgl::read_raw_rows(raw_path);
  std::string csv = mmfgl::emit_plotdata(table, {x, series, metric});
  if (out_file.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream ofs(out_file, std::ios::binary);
    ofs << csv;
    std::printf("wrote %s\n", out_file.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal federated graph learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seeds_arg;
  int workers = 1;

  CLI::App* gen = app.add_subcommand("gen", "generate a dataset bundle");
  gen->add_option("--config", config_path, "experiment config (dataset section is used)")
      ->required();
  gen->add_option("--out", out_dir, "bundle output directory")->required();
  gen->add_option("--seeds", seeds_arg, "comma-separated seeds (first one is used)");

  CLI::App* part = app.add_subcommand("partition", "split a dataset into client shards");
  part->add_option("--config", config_path, "experiment config")->required();
  part->add_option("--out", out_dir, "shard output directory")->required();
  part->add_option("--seeds", seeds_arg, "comma-separated seeds (first one is used)");

  CLI::App* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("--config", config_path, "experiment config")->required();
  run->add_option("--out", out_dir, "results directory (overrides config)");
  run->add_option("--seeds", seeds_arg, "comma-separated seed override");

  CLI::App* sweep = app.add_subcommand("sweep", "run a scenario/algorithm matrix");
  sweep->add_option("--config", config_path, "matrix config (axes may be arrays)")->required();
  sweep->add_option("--out", out_dir, "results directory");
  sweep->add_option("--seeds", seeds_arg, "comma-separated seed override");
  sweep->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  CLI::App* scaling = app.add_subcommand("scaling", "measure step-time scaling");
  scaling->add_option("--config", config_path, "scaling config (axis, grid, base sizes)")
      ->required();
  scaling->add_option("--out", out_dir, "output directory");

  std::string x_axis = "round", series = "algorithm", metric = "accuracy", raw_path, out_file;
  CLI::App* plot = app.add_subcommand("plotdata", "tidy CSV from raw results");
  plot->add_option("--raw", raw_path, "raw.jsonl produced by run/sweep")->required();
  plot->add_option("--x", x_axis, "x axis: round or ratio");
  plot->add_option("--series", series, "series: algorithm or scenario");
  plot->add_option("--metric", metric, "metric column to aggregate");
  plot->add_option("--out", out_file, "output CSV path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_dir, seeds_arg);
    if (part->parsed()) return cmd_partition(config_path, out_dir, seeds_arg);
    if (run->parsed()) return cmd_run(config_path, out_dir, seeds_arg);
    if (sweep->parsed()) return cmd_sweep(config_path, out_dir, seeds_arg, workers);
    if (scaling->parsed()) return cmd_scaling(config_path, out_dir);
    if (plot->parsed()) return cmd_plotdata(raw_path, x_axis, series, metric, out_file);
  } catch (const mmfgl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
