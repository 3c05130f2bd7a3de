#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mmfgl/bundle.hpp"
#include "mmfgl/error.hpp"
#include "mmfgl/evalmetrics.hpp"
#include "mmfgl/runner.hpp"

using namespace mmfgl;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream ifs(path, std::ios::binary);
  REQUIRE(bool(ifs));
  std::ostringstream buf;
  buf << ifs.rdbuf();
  return buf.str();
}

std::string fresh_dir(const std::string& name) {
  std::string dir = "runner_test_out/" + name;
  std::filesystem::remove_all(dir);
  return dir;
}

// a small, fast experiment: 120 nodes, 3 classes, 2 clients, 5 rounds
const char* kBaseConfig = R"({
  "dataset": {"nodes": 120, "classes": 3, "sbm": {"intra_p": 0.15, "inter_p": 0.02},
              "feat": {"dims": [5, 4], "sigma": 0.8, "informative_modalities": [0, 1]}},
  "scenario": {"num_clients": 2},
  "model": {"arch": "gcn", "hidden": 8, "layers": 2},
  "fed": {"algorithm": "fedavg", "rounds": 5, "local_epochs": 1},
  "seeds": [1, 2]
})";

}  // namespace

TEST_CASE("config parsing fills defaults and rejects junk") {
  SUBCASE("empty object keeps every default") {
    ExperimentConfig cfg = parse_config("{}");
    CHECK(cfg.dataset.source == "generate");
    CHECK(cfg.dataset.nodes == 120);
    CHECK(cfg.dataset.classes == 3);
    CHECK(cfg.dataset.feature_dims == std::vector<std::size_t>{8, 6});
    CHECK(cfg.model.arch == Arch::Gcn);
    CHECK(cfg.model.hidden == 16);
    CHECK(cfg.fed.algorithm == Aggregator::FedAvg);
    CHECK(cfg.rounds == 5);
    CHECK(cfg.task == "node_classification");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
    CHECK(!cfg.isolated);
    CHECK(!cfg.perturb.has_value());
    CHECK(!cfg.pretrain.has_value());
  }

  SUBCASE("every section parses") {
    ExperimentConfig cfg = parse_config(R"({
      "dataset": {"nodes": 60, "classes": 2, "sbm": {"intra_p": 0.3, "inter_p": 0.05},
                  "feat": {"dims": [4], "sigma": 0.5, "informative_modalities": [0],
                           "separation": 3.0}},
      "scenario": {"modality": "noniid", "beta": 0.2, "topology": "sbm", "label": "dirichlet",
                   "alpha": 0.7, "num_clients": 3, "topo": {"intra_p": 0.2, "inter_p": 0.02}},
      "model": {"arch": "branch_gcn", "hidden": 12, "layers": 3, "fusion": "concat",
                "recon_head": true},
      "fed": {"algorithm": "fedprox", "rounds": 7, "local_epochs": 2, "participation": 0.5,
              "mu": 0.05, "optimizer": "sgd", "lr": 0.01, "weight_decay": 0.0},
      "task": "node_classification",
      "metrics": ["accuracy", "macro_accuracy"],
      "seeds": [4, 5, 6],
      "output_dir": "elsewhere"
    })");
    CHECK(cfg.dataset.nodes == 60);
    CHECK(cfg.dataset.separation == doctest::Approx(3.0));
    CHECK(cfg.scenario.modality_axis == ModalityAxis::NonIid);
    CHECK(cfg.scenario.beta == doctest::Approx(0.2));
    CHECK(cfg.scenario.topology_axis == TopologyAxis::Sbm);
    CHECK(cfg.scenario.label_axis == LabelAxis::Dirichlet);
    CHECK(cfg.scenario.topo_params.intra_p == doctest::Approx(0.2));
    CHECK(cfg.scenario.num_clients == 3);
    CHECK(cfg.model.arch == Arch::BranchGcn);
    CHECK(cfg.model.fusion == Fusion::Concat);
    CHECK(cfg.model.recon_head);
    CHECK(cfg.fed.algorithm == Aggregator::FedProx);
    CHECK(cfg.rounds == 7);
    CHECK(cfg.fed.participation == doctest::Approx(0.5));
    CHECK(cfg.fed.optimizer == OptimKind::Sgd);
    CHECK(cfg.fed.optim.lr == doctest::Approx(0.01));
    CHECK(cfg.metrics.size() == 2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5, 6});
    CHECK(cfg.output_dir == "elsewhere");
  }

  SUBCASE("the isolated baseline is spelled as an algorithm") {
    ExperimentConfig cfg = parse_config(R"({"fed": {"algorithm": "isolated"}})");
    CHECK(cfg.isolated);
    CHECK(cfg.fed.algorithm == Aggregator::FedAvg);
  }

  SUBCASE("unknown keys report their dotted path") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"datasets": {}})"),
                         doctest::Contains("$.datasets"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"dataset": {"sbm": {"intrap": 0.1}}})"),
                         doctest::Contains("$.dataset.sbm.intrap"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"fed": {"momentum": 0.9}})"),
                         doctest::Contains("$.fed.momentum"), ConfigError);
  }

  SUBCASE("wrong types are rejected") {
    CHECK_THROWS_AS(parse_config(R"({"dataset": {"nodes": "many"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seeds": 7})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seeds": [-1]})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"metrics": "accuracy"})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"model": {"recon_head": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1,2]"), ConfigError);
  }

  SUBCASE("enum values are checked") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"model": {"arch": "transformer"}})"),
                         doctest::Contains("mlp"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"fed": {"algorithm": "fedsgd"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scenario": {"topology": "mesh"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"task": "regression"})"), ConfigError);
  }

  SUBCASE("cross-field rules") {
    // metric/task mismatch
    CHECK_THROWS_AS(parse_config(R"({"metrics": ["auc"]})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"task": "link_prediction", "metrics": ["accuracy"]})"),
                    ConfigError);
    // reconstruction pretraining without the head
    CHECK_THROWS_AS(parse_config(R"({"pretrain": {"objective": "reconstruction"}})"),
                    ConfigError);
    // prototype aggregation does not compose with the two-stage path
    CHECK_THROWS_AS(
        parse_config(
            R"({"fed": {"algorithm": "fedproto"},
                "model": {"recon_head": true},
                "pretrain": {"objective": "reconstruction"}})"),
        ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seeds": []})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"fed": {"rounds": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scenario": {"num_clients": 0}})"), ConfigError);
    // two-view task on a one-modality dataset
    CHECK_THROWS_AS(parse_config(R"({"task": "modality_matching",
                                     "dataset": {"feat": {"dims": [6]}}})"),
                    ConfigError);
  }

  SUBCASE("perturbation section") {
    ExperimentConfig cfg = parse_config(
        R"({"perturb": {"kind": "edge_sparsify", "ratio": 0.4}})");
    REQUIRE(cfg.perturb.has_value());
    CHECK(cfg.perturb->kind == PerturbKind::EdgeSparsify);
    CHECK(cfg.perturb->ratio == doctest::Approx(0.4));

    cfg = parse_config(R"({"perturb": {"kind": "feature_noise", "sigma": 1.5}})");
    CHECK(cfg.perturb->kind == PerturbKind::FeatureNoise);
    CHECK(cfg.perturb->ratio == doctest::Approx(1.5));

    // feature noise takes sigma, everything else takes ratio
    CHECK_THROWS_AS(parse_config(R"({"perturb": {"kind": "feature_noise", "ratio": 0.5}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"perturb": {"kind": "edge_noise", "sigma": 0.5}})"),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_config(R"({"perturb": {"kind": "edge_noise", "ratio": 0.2, "sigma": 0.5}})"),
        ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"perturb": {"ratio": 0.2}})"), ConfigError);
    // range checks come from the perturbation module
    CHECK_THROWS_AS(parse_config(R"({"perturb": {"kind": "edge_noise", "ratio": 0.95}})"),
                    ConfigError);
  }

  SUBCASE("load_config reads a file") {
    std::filesystem::create_directories("runner_test_out");
    {
      std::ofstream ofs("runner_test_out/cfg.json");
      ofs << R"({"fed": {"rounds": 9}})";
    }
    CHECK(load_config("runner_test_out/cfg.json").rounds == 9);
    CHECK_THROWS_AS(load_config("runner_test_out/nope.json"), MissingFileError);
  }
}

TEST_CASE("dataset builder") {
  DatasetConfig cfg;
  cfg.nodes = 91;
  cfg.classes = 3;
  cfg.feature_dims = {5, 4};
  cfg.informative_modalities = {0};

  SUBCASE("generated graphs have the configured shape") {
    MultimodalGraph g = build_dataset(cfg, 11);
    CHECK(g.num_nodes == 91);
    CHECK(g.num_classes == 3);
    REQUIRE(g.modalities.size() == 2);
    CHECK(g.modalities[0].feature_dim == 5);
    CHECK(g.modalities[1].feature_dim == 4);
    // block sizes differ by at most one
    std::vector<std::size_t> counts(3, 0);
    for (int y : g.labels) counts[std::size_t(y)] += 1;
    CHECK(counts[0] == 31);
    CHECK(counts[1] == 30);
    CHECK(counts[2] == 30);

    MultimodalGraph again = build_dataset(cfg, 11);
    CHECK(again.edges == g.edges);
    CHECK(again.features[0].data() == g.features[0].data());
    MultimodalGraph other = build_dataset(cfg, 12);
    CHECK(other.features[0].data() != g.features[0].data());
  }

  SUBCASE("bundle source loads from disk") {
    MultimodalGraph g = build_dataset(cfg, 11);
    std::string dir = fresh_dir("bundle_src");
    save_bundle(g, dir);
    DatasetConfig from_disk;
    from_disk.source = "bundle";
    from_disk.bundle_path = dir;
    MultimodalGraph back = build_dataset(from_disk, 999);  // seed is irrelevant here
    CHECK(back.num_nodes == g.num_nodes);
    CHECK(back.edges == g.edges);
    CHECK(back.features[0].data() == g.features[0].data());
    CHECK(back.labels == g.labels);
  }

  SUBCASE("bad dataset configs") {
    DatasetConfig bad = cfg;
    bad.source = "ftp";
    CHECK_THROWS_AS(build_dataset(bad, 1), ConfigError);
    bad = cfg;
    bad.classes = 1;
    CHECK_THROWS_AS(build_dataset(bad, 1), ConfigError);
    bad = cfg;
    bad.nodes = 2;
    CHECK_THROWS_AS(build_dataset(bad, 1), ConfigError);
    bad = cfg;
    bad.source = "bundle";
    bad.bundle_path = "runner_test_out/missing_bundle";
    CHECK_THROWS_AS(build_dataset(bad, 1), MissingFileError);
  }
}

TEST_CASE("single cell experiment produces the full grid of rows") {
  ExperimentConfig cfg = parse_config(kBaseConfig);
  ResultsTable table = run_experiment(cfg);

  REQUIRE(table.raw.size() == 10);  // 2 seeds x 5 rounds
  // the model the runner builds for this config, reconstructed here to pin
  // the telemetry to the wire format
  ModelSpec spec;
  spec.arch = Arch::Gcn;
  spec.in_dims = {5, 4};
  spec.hidden = 8;
  spec.out_dim = 3;
  spec.num_layers = 2;
  const std::uint64_t msg = 4 * ParamVector(spec).size() + 8;

  std::set<std::pair<std::uint64_t, int>> seen;
  for (const RawRow& row : table.raw) {
    CHECK(!row.failed);
    CHECK(row.algorithm == "fedavg");
    CHECK(row.scenario == table.raw[0].scenario);
    CHECK(!row.scenario.empty());
    CHECK(row.ratio == 0.0);
    CHECK(row.diverged.empty());
    REQUIRE(row.metrics.count("accuracy") == 1);
    double acc = row.metrics.at("accuracy");
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(row.uplink_bytes == 2 * msg);
    CHECK(row.downlink_bytes == 2 * msg);
    CHECK(row.wall_ms > 0.0);
    seen.insert({row.seed, row.round});
  }
  CHECK(seen.size() == 10);  // every (seed, round) pair exactly once
  for (std::uint64_t s : {1, 2})
    for (int r = 0; r < 5; ++r) CHECK(seen.count({s, r}) == 1);

  // summary: one row, stats recomputable from the raw rows
  REQUIRE(table.summary.size() == 1);
  const SummaryRow& sum = table.summary[0];
  CHECK(sum.metric == "accuracy");
  CHECK(sum.algorithm == "fedavg");
  CHECK(sum.scenario == table.raw[0].scenario);
  CHECK(sum.num_seeds == 2);

  double final_sum = 0, best_sum = 0;
  std::vector<double> finals, bests;
  for (std::uint64_t s : {1, 2}) {
    double fin = 0, best = -1;
    for (const RawRow& row : table.raw) {
      if (row.seed != s) continue;
      double v = row.metrics.at("accuracy");
      if (row.round == 4) fin = v;
      best = std::max(best, v);
    }
    finals.push_back(fin);
    bests.push_back(best);
    final_sum += fin;
    best_sum += best;
  }
  CHECK(sum.final_mean == doctest::Approx(final_sum / 2).epsilon(1e-12));
  CHECK(sum.best_mean == doctest::Approx(best_sum / 2).epsilon(1e-12));
  double fvar = 0;
  for (double f : finals) fvar += (f - final_sum / 2) * (f - final_sum / 2);
  CHECK(sum.final_std == doctest::Approx(std::sqrt(fvar)).epsilon(1e-9));
  CHECK(sum.convergence_round >= 1);
  CHECK(sum.convergence_round <= 5);
}

TEST_CASE("repeat runs are byte identical") {
  ExperimentConfig cfg = parse_config(kBaseConfig);
  std::string dir_a = fresh_dir("rep_a");
  std::string dir_b = fresh_dir("rep_b");
  write_results(run_experiment(cfg), dir_a);
  write_results(run_experiment(cfg), dir_b);

  std::string raw_a = slurp(dir_a + "/raw.jsonl");
  CHECK(raw_a == slurp(dir_b + "/raw.jsonl"));
  CHECK(slurp(dir_a + "/summary.csv") == slurp(dir_b + "/summary.csv"));

  // wall time lives only in timing.jsonl so the science files can be diffed
  CHECK(raw_a.find("wall_ms") == std::string::npos);
  std::string timing = slurp(dir_a + "/timing.jsonl");
  CHECK(timing.find("wall_ms") != std::string::npos);
  // no leftover temp files from the atomic writes
  CHECK(!std::filesystem::exists(dir_a + "/raw.jsonl.tmp"));
}

TEST_CASE("isolated baseline runs without communication") {
  ExperimentConfig cfg = parse_config(R"({
    "dataset": {"nodes": 60, "classes": 2, "feat": {"dims": [4, 3]}},
    "scenario": {"num_clients": 2},
    "model": {"hidden": 6},
    "fed": {"algorithm": "isolated", "rounds": 3},
    "seeds": [7]
  })");
  ResultsTable table = run_experiment(cfg);
  REQUIRE(table.raw.size() == 3);
  for (const RawRow& row : table.raw) {
    CHECK(row.algorithm == "isolated");
    CHECK(row.uplink_bytes == 0);
    CHECK(row.downlink_bytes == 0);
    CHECK(row.metrics.at("accuracy") >= 0.0);
  }
  // rounds advance even though each call trains one round at a time
  CHECK(table.raw[0].round == 0);
  CHECK(table.raw[1].round == 1);
  CHECK(table.raw[2].round == 2);
}

TEST_CASE("link prediction and matching tasks report their metrics") {
  SUBCASE("link prediction") {
    ExperimentConfig cfg = parse_config(R"({
      "dataset": {"nodes": 40, "classes": 2, "sbm": {"intra_p": 0.25, "inter_p": 0.05},
                  "feat": {"dims": [4, 3]}},
      "scenario": {"num_clients": 2},
      "model": {"hidden": 6},
      "fed": {"rounds": 2},
      "task": "link_prediction",
      "seeds": [3]
    })");
    ResultsTable table = run_experiment(cfg);
    REQUIRE(table.raw.size() == 2);
    for (const RawRow& row : table.raw) {
      REQUIRE(row.metrics.count("auc") == 1);
      REQUIRE(row.metrics.count("ap") == 1);
      CHECK(row.metrics.at("auc") >= 0.0);
      CHECK(row.metrics.at("auc") <= 1.0);
      CHECK(row.metrics.at("ap") >= 0.0);
      CHECK(row.metrics.at("ap") <= 1.0);
    }
    CHECK(table.summary.size() == 2);  // auc and ap
  }

  SUBCASE("modality matching and retrieval") {
    const char* base = R"({
      "dataset": {"nodes": 40, "classes": 2, "sbm": {"intra_p": 0.25, "inter_p": 0.05},
                  "feat": {"dims": [4, 3], "informative_modalities": [0, 1]}},
      "scenario": {"num_clients": 2},
      "model": {"arch": "branch_gcn", "hidden": 6},
      "fed": {"rounds": 2},
      "task": "%s",
      "seeds": [3]
    })";
    char buf[1024];

    std::snprintf(buf, sizeof(buf), base, "modality_matching");
    ResultsTable match = run_experiment(parse_config(buf));
    REQUIRE(match.raw.size() == 2);
    for (const RawRow& row : match.raw) {
      CHECK(row.metrics.at("match_acc") >= 0.0);
      CHECK(row.metrics.at("match_acc") <= 1.0);
    }

    std::snprintf(buf, sizeof(buf), base, "modality_retrieval");
    ResultsTable retr = run_experiment(parse_config(buf));
    REQUIRE(retr.raw.size() == 2);
    for (const RawRow& row : retr.raw) {
      CHECK(row.metrics.at("mrr") > 0.0);
      CHECK(row.metrics.at("mrr") <= 1.0);
      CHECK(row.metrics.at("recall@10") >= 0.0);
      CHECK(row.metrics.at("recall@10") <= 1.0);
    }
  }
}

TEST_CASE("a failing seed is recorded and the rest continue") {
  // a near-edgeless graph: seeds where a client ends up with no edges blow
  // up inside the link objective, the others survive
  ExperimentConfig cfg = parse_config(R"({
    "dataset": {"nodes": 30, "classes": 2, "sbm": {"intra_p": 0.015, "inter_p": 0.015},
                "feat": {"dims": [4, 3]}},
    "scenario": {"num_clients": 2},
    "model": {"hidden": 4},
    "fed": {"rounds": 1},
    "task": "link_prediction",
    "seeds": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]
  })");
  ResultsTable table = run_experiment(cfg);

  std::set<std::uint64_t> failed, ok;
  for (const RawRow& row : table.raw) {
    if (row.failed) {
      CHECK(row.round == -1);
      CHECK(row.error.find("ConfigError") == 0);
      CHECK(row.metrics.empty());
      failed.insert(row.seed);
    } else {
      CHECK(row.metrics.count("auc") == 1);
      ok.insert(row.seed);
    }
  }
  CHECK(failed.size() + ok.size() == 12);  // every seed produced rows
  CHECK(failed.size() >= 1);
  CHECK(ok.size() >= 1);
  // the summary covers exactly the surviving seeds
  REQUIRE(table.summary.size() == 2);
  CHECK(table.summary[0].num_seeds == ok.size());
}

TEST_CASE("matrix expansion covers the cartesian product") {
  SUBCASE("a scalar config is a single cell") {
    std::vector<ExperimentConfig> cells = expand_matrix(kBaseConfig);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].rounds == 5);
    CHECK(cells[0].seeds.size() == 2);
  }

  SUBCASE("axis arrays multiply") {
    std::vector<ExperimentConfig> cells = expand_matrix(R"({
      "scenario": {"modality": ["iid", "noniid"], "topology": ["available", "sbm"],
                   "label": ["iid", "dirichlet"], "num_clients": 2},
      "seeds": [1, 2, 3]
    })");
    REQUIRE(cells.size() == 8);
    std::set<std::tuple<int, int, int>> combos;
    for (const ExperimentConfig& c : cells) {
      combos.insert({int(c.scenario.modality_axis), int(c.scenario.topology_axis),
                     int(c.scenario.label_axis)});
      CHECK(c.seeds.size() == 3);  // every cell keeps the full seed list
    }
    CHECK(combos.size() == 8);

    cells = expand_matrix(R"({
      "scenario": {"modality": ["iid", "noniid"], "topology": ["available", "sbm"],
                   "label": ["iid", "dirichlet"]},
      "fed": {"algorithm": ["fedavg", "fedproto"]}
    })");
    CHECK(cells.size() == 16);
  }

  SUBCASE("perturbation ratio lists are an axis too") {
    std::vector<ExperimentConfig> cells = expand_matrix(R"({
      "perturb": {"kind": "edge_sparsify", "ratios": [0.0, 0.25, 0.5]}
    })");
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].perturb->ratio == doctest::Approx(0.0));
    CHECK(cells[1].perturb->ratio == doctest::Approx(0.25));
    CHECK(cells[2].perturb->ratio == doctest::Approx(0.5));
    CHECK_THROWS_AS(expand_matrix(R"({
      "perturb": {"kind": "edge_sparsify", "ratio": 0.1, "ratios": [0.2]}
    })"),
                    ConfigError);
  }

  SUBCASE("empty axes are rejected") {
    CHECK_THROWS_WITH_AS(expand_matrix(R"({"scenario": {"modality": []}})"),
                         doctest::Contains("$.scenario.modality"), ConfigError);
    CHECK_THROWS_AS(expand_matrix(R"({"fed": {"algorithm": []}})"), ConfigError);
    CHECK_THROWS_AS(expand_matrix(R"({"perturb": {"kind": "edge_noise", "ratios": []}})"),
                    ConfigError);
  }

  SUBCASE("cells are validated like any config") {
    CHECK_THROWS_AS(expand_matrix(R"({"fed": {"algorithm": ["fedavg", "fedsgd"]}})"),
                    ConfigError);
  }
}

TEST_CASE("matrix run merges cells in declaration order") {
  const char* matrix = R"({
    "dataset": {"nodes": 48, "classes": 2, "feat": {"dims": [4, 3]}},
    "scenario": {"num_clients": 2},
    "model": {"hidden": 4},
    "fed": {"algorithm": ["fedavg", "isolated"], "rounds": 2},
    "seeds": [1]
  })";
  ResultsTable serial = run_matrix(matrix, 1);
  REQUIRE(serial.raw.size() == 4);  // 2 algorithms x 1 seed x 2 rounds
  CHECK(serial.raw[0].algorithm == "fedavg");
  CHECK(serial.raw[1].algorithm == "fedavg");
  CHECK(serial.raw[2].algorithm == "isolated");
  CHECK(serial.raw[3].algorithm == "isolated");
  CHECK(serial.summary.size() == 2);

  // scheduling across workers must not leak into the output
  ResultsTable threaded = run_matrix(matrix, 4);
  std::string dir_a = fresh_dir("mx_serial");
  std::string dir_b = fresh_dir("mx_threaded");
  write_results(serial, dir_a);
  write_results(threaded, dir_b);
  CHECK(slurp(dir_a + "/raw.jsonl") == slurp(dir_b + "/raw.jsonl"));
  CHECK(slurp(dir_a + "/summary.csv") == slurp(dir_b + "/summary.csv"));
}

TEST_CASE("pretraining rows carry probe and final accuracy") {
  ExperimentConfig cfg = parse_config(R"({
    "dataset": {"nodes": 60, "classes": 2, "feat": {"dims": [4, 3]}},
    "scenario": {"num_clients": 2},
    "model": {"hidden": 6, "recon_head": true},
    "fed": {"rounds": 1},
    "pretrain": {"objective": "reconstruction", "rounds": 2, "finetune_epochs": 3},
    "seeds": [5]
  })");
  ResultsTable table = run_experiment(cfg);
  REQUIRE(table.raw.size() == 3);  // 2 pretrain rounds + the finetune row
  CHECK(table.raw[0].metrics.count("pretrain_loss") == 1);
  CHECK(table.raw[1].metrics.count("pretrain_loss") == 1);
  const RawRow& fin = table.raw[2];
  CHECK(fin.round == 2);
  REQUIRE(fin.metrics.count("probe_accuracy") == 1);
  REQUIRE(fin.metrics.count("accuracy") == 1);
  CHECK(fin.metrics.at("accuracy") >= 0.0);
  CHECK(fin.metrics.at("accuracy") <= 1.0);
}

TEST_CASE("cost model counts workload") {
  ModelSpec spec;
  spec.arch = Arch::Gcn;
  spec.in_dims = {4, 3};
  spec.hidden = 8;
  spec.out_dim = 3;
  spec.num_layers = 2;

  CostModel cost = make_cost_model(spec, 200, 900, 4);
  CHECK(cost.layers == 2);
  CHECK(cost.n == 200);
  CHECK(cost.m == 900);
  CHECK(cost.f == 7);
  CHECK(cost.h == 8);
  CHECK(cost.params == ParamVector(spec).size());
  CHECK(cost.epochs == 4);
  // the sparse aggregation term shows up for convolutional models only
  CHECK(cost.time_class.find("m * h") != std::string::npos);

  spec.arch = Arch::Mlp;
  CostModel mlp = make_cost_model(spec, 200, 900, 4);
  CHECK(mlp.time_class.find("m * h") == std::string::npos);
  CHECK(mlp.params == ParamVector(spec).size());

  CHECK_THROWS_AS(make_cost_model(spec, 10, 10, 0), ConfigError);
}

TEST_CASE("scaling fits a log-log slope") {
  SUBCASE("a constant grid fits a flat line by convention") {
    ScalingFit fit = measure_scaling('n', {64, 64, 64}, 32, 128, 8, 1, 3);
    CHECK(fit.slope == 0.0);
    CHECK(fit.ci_half == 0.0);
    REQUIRE(fit.points.size() == 3);
    for (const ScalingPoint& p : fit.points) {
      CHECK(p.n == 64);
      CHECK(p.m == 128);
      CHECK(p.f == 8);
      CHECK(p.ms > 0.0);
    }
  }

  SUBCASE("the feature axis grows superlinearly") {
    ScalingFit fit = measure_scaling('f', {32, 64, 128}, 64, 128, 8, 5, 3);
    CHECK(fit.axis == 'f');
    REQUIRE(fit.points.size() == 3);
    CHECK(fit.points[0].f == 32);
    CHECK(fit.points[2].f == 128);
    CHECK(fit.points[0].n == 64);
    // the hidden width tracks f, so cost grows at least like f itself even
    // with small-size overheads in the mix
    CHECK(fit.slope > 0.5);
    CHECK(fit.slope < 3.5);
    CHECK(fit.ci_half >= 0.0);
  }

  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(measure_scaling('q', {8, 16, 32}, 32, 64, 8, 1, 1), ConfigError);
    CHECK_THROWS_AS(measure_scaling('f', {8, 16}, 32, 64, 8, 1, 1), ConfigError);
    CHECK_THROWS_AS(measure_scaling('f', {0, 16, 32}, 32, 64, 8, 1, 1), ConfigError);
    CHECK_THROWS_AS(measure_scaling('f', {8, 16, 32}, 32, 64, 8, 0, 1), ConfigError);
  }
}

TEST_CASE("plot data export") {
  ResultsTable table;
  auto add = [&](const char* algo, std::uint64_t seed, int round, double ratio, double acc) {
    RawRow row;
    row.scenario = "cell";
    row.algorithm = algo;
    row.seed = seed;
    row.round = round;
    row.ratio = ratio;
    row.metrics["accuracy"] = acc;
    table.raw.push_back(row);
  };
  add("fedavg", 1, 0, 0.0, 0.50);
  add("fedavg", 2, 0, 0.0, 0.60);
  add("fedavg", 1, 1, 0.0, 0.70);
  add("fedavg", 2, 1, 0.0, 0.80);
  add("fedproto", 1, 0, 0.0, 0.40);
  add("fedproto", 1, 1, 0.0, 0.45);
  RawRow bad;
  bad.scenario = "cell";
  bad.algorithm = "fedavg";
  bad.failed = true;
  bad.error = "ConfigError: whatever";
  table.raw.push_back(bad);

  SUBCASE("rounds on the x axis, one series per algorithm") {
    std::string csv = emit_plotdata(table, {"round", "algorithm", "accuracy"});
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,series,mean,std");
    struct Parsed {
      double x, mean, std_;
      std::string series;
    };
    std::vector<Parsed> rows;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string x, series, mean, stdv;
      std::getline(ls, x, ',');
      std::getline(ls, series, ',');
      std::getline(ls, mean, ',');
      std::getline(ls, stdv, ',');
      rows.push_back({std::stod(x), std::stod(mean), std::stod(stdv), series});
    }
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].series == "fedavg");
    CHECK(rows[0].x == 0.0);
    CHECK(rows[0].mean == doctest::Approx(0.55).epsilon(1e-9));
    CHECK(rows[0].std_ == doctest::Approx(std::sqrt(0.005)).epsilon(1e-9));
    CHECK(rows[1].mean == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(rows[2].series == "fedproto");
    CHECK(rows[2].mean == doctest::Approx(0.40).epsilon(1e-9));
    CHECK(rows[3].std_ == 0.0);  // single seed
  }

  SUBCASE("ratio on the x axis") {
    ResultsTable sweep;
    RawRow row;
    row.scenario = "cell";
    row.algorithm = "fedavg";
    row.round = 1;
    row.ratio = 0.25;
    row.metrics["accuracy"] = 0.9;
    sweep.raw.push_back(row);
    row.ratio = 0.5;
    row.metrics["accuracy"] = 0.7;
    sweep.raw.push_back(row);
    std::string csv = emit_plotdata(sweep, {"ratio", "algorithm", "accuracy"});
    CHECK(csv.find("0.25,fedavg,0.9,0") != std::string::npos);
    CHECK(csv.find("0.5,fedavg,0.7,0") != std::string::npos);
  }

  SUBCASE("unknown names are rejected") {
    CHECK_THROWS_AS(emit_plotdata(table, {"time", "algorithm", "accuracy"}), ConfigError);
    CHECK_THROWS_AS(emit_plotdata(table, {"round", "seed", "accuracy"}), ConfigError);
    CHECK_THROWS_AS(emit_plotdata(table, {"round", "algorithm", "loss"}), ConfigError);
  }
}

TEST_CASE("raw rows survive the disk round trip") {
  ExperimentConfig cfg = parse_config(kBaseConfig);
  ResultsTable table = run_experiment(cfg);
  // tack on a failed row so both shapes go through the format
  RawRow bad;
  bad.scenario = table.raw[0].scenario;
  bad.algorithm = "fedavg";
  bad.seed = 99;
  bad.failed = true;
  bad.error = "NumericError: it went sideways";
  table.raw.push_back(bad);

  std::string dir = fresh_dir("roundtrip");
  write_results(table, dir);
  std::vector<RawRow> back = read_raw_rows(dir + "/raw.jsonl");
  REQUIRE(back.size() == table.raw.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    const RawRow& a = table.raw[i];
    const RawRow& b = back[i];
    CHECK(a.scenario == b.scenario);
    CHECK(a.algorithm == b.algorithm);
    CHECK(a.seed == b.seed);
    CHECK(a.round == b.round);
    CHECK(a.failed == b.failed);
    CHECK(a.error == b.error);
    if (a.failed) continue;
    CHECK(a.ratio == b.ratio);
    CHECK(a.uplink_bytes == b.uplink_bytes);
    CHECK(a.downlink_bytes == b.downlink_bytes);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (const auto& [name, value] : a.metrics) {
      REQUIRE(b.metrics.count(name) == 1);
      CHECK(b.metrics.at(name) == value);  // full-precision JSON doubles
    }
  }
  CHECK_THROWS_AS(read_raw_rows(dir + "/nothing.jsonl"), MissingFileError);
}
