#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfgl/federation.hpp"
#include "mmfgl/partition.hpp"
#include "mmfgl/perturb.hpp"

namespace mmfgl {

// ---- configuration ----

struct DatasetConfig {
  std::string source = "generate";  // "generate" | "bundle"
  std::string bundle_path;
  std::size_t nodes = 120;
  int classes = 3;
  double intra_p = 0.10;  // block-model edge probabilities
  double inter_p = 0.01;
  std::vector<std::size_t> feature_dims = {8, 6};
  std::vector<std::size_t> informative_modalities = {0};
  double feat_sigma = 1.0;
  double separation = 2.0;
};

struct ModelConfig {
  Arch arch = Arch::Gcn;
  std::size_t hidden = 16;
  int layers = 2;
  Fusion fusion = Fusion::MaskedMean;
  bool recon_head = false;
};

struct PretrainConfig {
  std::string objective = "reconstruction";  // "reconstruction" | "contrastive"
  int rounds = 0;
  int finetune_epochs = 10;
  bool finetune_backbone = false;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ScenarioConfig scenario;  // master_seed is overridden per experiment seed
  ModelConfig model;
  FedConfig fed;
  bool isolated = false;  // no-communication baseline instead of aggregation
  int rounds = 5;
  std::string task = "node_classification";
  std::vector<std::string> metrics;  // empty = task default
  std::optional<PerturbSpec> perturb;
  std::optional<PretrainConfig> pretrain;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";

  void validate() const;
};

// Strict parse of the JSON config text: schema-checked, unknown keys
// anywhere are rejected with the offending dotted path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Cartesian expansion of a config whose scenario.modality / scenario.topology
// / scenario.label / fed.algorithm entries may be arrays.  Every cell keeps
// the full seed list.  Empty arrays are rejected.
std::vector<ExperimentConfig> expand_matrix(const std::string& json_text);

// ---- results ----

struct RawRow {
  std::string scenario;  // scenario cell hash
  std::string algorithm;
  std::uint64_t seed = 0;
  int round = -1;
  double ratio = 0.0;  // perturbation ratio, 0 when none
  std::map<std::string, double> metrics;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::vector<int> diverged;
  bool failed = false;
  std::string error;    // error class name when failed
  double wall_ms = 0.0;  // kept out of raw.jsonl; see timing.jsonl
};

struct SummaryRow {
  std::string scenario;
  std::string algorithm;
  std::string metric;
  double ratio = 0.0;
  double final_mean = 0.0, final_std = 0.0;
  double best_mean = 0.0, best_std = 0.0;
  int convergence_round = -1;
  std::size_t num_seeds = 0;
};

struct ResultsTable {
  std::vector<RawRow> raw;
  std::vector<SummaryRow> summary;
};

// Builds the dataset for one experiment seed: either a fresh two-modality
// block-model graph with class-conditioned features, or the bundle on disk.
MultimodalGraph build_dataset(const DatasetConfig& config, std::uint64_t seed);

// One experiment: dataset -> scenario shards -> (optional) perturbation ->
// federated protocol -> per-round metrics, for every configured seed.  A
// seed that throws becomes a failed row carrying the error class; the
// remaining seeds still run.
ResultsTable run_experiment(const ExperimentConfig& config);

// Matrix (and optional perturb.ratios) sweep: expands cells, runs them on
// up to `workers` threads, and merges tables in cell order so output is
// order-independent of scheduling.
ResultsTable run_matrix(const std::string& json_text, int workers = 1);

// Serialization of the table: raw.jsonl + summary.csv + timing.jsonl in
// out_dir, written atomically (temp file, then rename).  raw.jsonl and
// summary.csv hold only deterministic fields; wall-clock times go to
// timing.jsonl.
void write_results(const ResultsTable& table, const std::string& out_dir);

// Reads raw.jsonl back into rows (timing is not restored).
std::vector<RawRow> read_raw_rows(const std::string& path);

// ---- symbolic cost accounting ----

// Named per-round workload counters for one client step, plus the dominant
// complexity class as a human-readable formula.
struct CostModel {
  std::size_t layers = 0;
  std::size_t n = 0;       // nodes
  std::size_t m = 0;       // edges
  std::size_t f = 0;       // input feature total
  std::size_t h = 0;       // hidden width
  std::size_t params = 0;  // trainable parameter count
  std::size_t epochs = 0;
  std::string time_class;  // e.g. "m*h + n*f*h"
};

CostModel make_cost_model(const ModelSpec& spec, std::size_t n, std::size_t m, int local_epochs);

// ---- scaling measurements ----

struct ScalingPoint {
  std::size_t value = 0;  // the varied size
  std::size_t n = 0, m = 0, f = 0;
  double ms = 0.0;  // median step time
};

struct ScalingFit {
  char axis = 'f';
  double slope = 0.0;
  double ci_half = 0.0;  // ~95% half-width from the residual spread
  std::vector<ScalingPoint> points;
};

// Times one full-batch gradient step per grid value, varying exactly one of
// n / m / f while holding the others at the given base sizes, then fits a
// log-log line.  Needs at least 3 grid points.  For the f axis the hidden
// width tracks f so the dense term dominates.
ScalingFit measure_scaling(char axis, const std::vector<std::size_t>& grid, std::size_t base_n,
                           std::size_t base_m, std::size_t base_f, int reps, std::uint64_t seed);

// ---- tidy plot exports ----

struct PlotSpec {
  std::string x;       // "round" | "ratio"
  std::string series;  // "algorithm" | "scenario"
  std::string metric;
};

// Tidy CSV (x, series, mean, std over seeds) from the raw rows.  Unknown
// x / series / metric names are rejected.
std::string emit_plotdata(const ResultsTable& table, const PlotSpec& spec);

}  // namespace mmfgl
