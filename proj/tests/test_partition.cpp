#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "mmfgl/error.hpp"
#include "mmfgl/partition.hpp"
#include "mmfgl/rng.hpp"
#include "mmfgl/synth.hpp"
#include "test_util.hpp"

using namespace mmfgl;
using testutil::adjusted_rand_index;
using testutil::cut_edges;
using testutil::for_each_partition;
using testutil::make_labeled_graph;

namespace {

using EdgeList = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

const EdgeList kTriangle2 = {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}};
const EdgeList kBridged = {{0, 1}, {0, 2}, {1, 2}, {2, 3}, {3, 4}, {3, 5}, {4, 5}};
const EdgeList kK4 = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};

MultimodalGraph bare(std::size_t n, EdgeList edges) {
  std::vector<int> labels(n, 0);
  return make_labeled_graph(n, std::move(edges), std::move(labels), 1);
}

// Labeled SBM plus Gaussian features in every listed modality dim.
MultimodalGraph sbm_with_features(std::vector<std::size_t> blocks, double intra, double inter,
                                  std::vector<std::size_t> dims, std::uint64_t seed) {
  SbmParams sp;
  sp.block_sizes = std::move(blocks);
  sp.intra_p = intra;
  sp.inter_p = inter;
  sp.seed = seed;
  MultimodalGraph g = generate_sbm(sp);
  std::vector<std::size_t> informative(dims.size());
  std::iota(informative.begin(), informative.end(), std::size_t{0});
  auto params = FeatureSynthParams::make(g.num_classes, dims, 1.0, informative, 3.0);
  return synthesize_features(std::move(g), params, seed + 17);
}

double best_partition_modularity(const MultimodalGraph& g) {
  double best = -1.0;
  for_each_partition(g.num_nodes, [&](const std::vector<int>& part) {
    best = std::max(best, modularity(g, part));
  });
  return best;
}

std::vector<std::set<std::uint32_t>> client_sets(const PartitionResult& r) {
  std::vector<std::set<std::uint32_t>> out;
  for (const auto& s : r.shards)
    out.emplace_back(s.node_global_ids.begin(), s.node_global_ids.end());
  return out;
}

double mean_client_label_tv(const MultimodalGraph& g, const PartitionResult& r) {
  const auto global = label_histogram(g);
  double acc = 0.0;
  for (const auto& s : r.shards) acc += total_variation(label_histogram(s.graph), global);
  return acc / double(r.shards.size());
}

// Raw bytes of everything an axis op may touch, for identity checks.
struct ShardSnapshot {
  EdgeList edges;
  std::vector<std::uint8_t> mask;
  std::vector<std::vector<float>> features;

  explicit ShardSnapshot(const ClientShard& s)
      : edges(s.graph.edges), mask(s.graph.modality_mask.data()) {
    for (const auto& f : s.graph.features) features.push_back(f.data());
  }
  bool operator==(const ShardSnapshot& o) const {
    return edges == o.edges && mask == o.mask && features == o.features;
  }
};

}  // namespace

TEST_CASE("louvain pinned communities") {
  // two disjoint triangles: each triangle its own community, modularity 1/2
  auto g = bare(6, kTriangle2);
  auto comm = louvain(g);
  CHECK(comm == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(modularity(g, comm) == doctest::Approx(0.5).epsilon(1e-12));

  // complete graph collapses to a single community
  auto k4 = bare(4, kK4);
  auto comm4 = louvain(k4);
  CHECK(comm4 == std::vector<int>{0, 0, 0, 0});

  // no edges: everyone isolated
  auto lonely = bare(3, {});
  CHECK(louvain(lonely) == std::vector<int>{0, 1, 2});

  // deterministic
  CHECK(louvain(g) == comm);
}

TEST_CASE("louvain reaches the exhaustive-search modularity optimum on small graphs") {
  const std::vector<std::pair<std::size_t, EdgeList>> cases = {
      {6, kTriangle2},
      {6, kBridged},
      {4, kK4},
      {4, {{0, 1}, {1, 2}, {2, 3}}},
      {5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}},
      {5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}},
  };
  for (const auto& [n, edges] : cases) {
    CAPTURE(n);
    CAPTURE(edges.size());
    auto g = bare(n, edges);
    double got = modularity(g, louvain(g));
    double best = best_partition_modularity(g);
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("louvain recovers planted blocks") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    SbmParams p;
    p.block_sizes = {40, 40};
    p.intra_p = 0.4;
    p.inter_p = 0.01;
    p.seed = seed;
    auto g = generate_sbm(p);
    auto comm = louvain(g);
    CHECK(adjusted_rand_index(comm, g.labels) > 0.9);
  }
}

TEST_CASE("louvain partitioner basics") {
  auto g = bare(6, kTriangle2);

  SUBCASE("K=1 owns everything") {
    auto r = partition_by_labels_louvain(g, 1, 7);
    CHECK(r.shards.size() == 1);
    CHECK(r.shards[0].node_global_ids.size() == 6);
    CHECK(r.assignment == std::vector<int>(6, 0));
  }

  SUBCASE("two triangles, two clients: each triangle is one client") {
    auto r = partition_by_labels_louvain(g, 2, 7);
    auto sets = client_sets(r);
    std::set<std::uint32_t> t0 = {0, 1, 2}, t1 = {3, 4, 5};
    CHECK(((sets[0] == t0 && sets[1] == t1) || (sets[0] == t1 && sets[1] == t0)));
  }

  SUBCASE("a single dense community still yields K nonempty clients") {
    EdgeList clique;
    for (std::uint32_t u = 0; u < 30; ++u)
      for (std::uint32_t v = u + 1; v < 30; ++v) clique.emplace_back(u, v);
    auto dense = bare(30, clique);
    auto r = partition_by_labels_louvain(dense, 3, 7);
    std::size_t total = 0;
    for (const auto& s : r.shards) {
      CHECK(s.node_global_ids.size() > 0);
      total += s.node_global_ids.size();
    }
    CHECK(total == 30);
  }

  SUBCASE("K above node count rejected") {
    CHECK_THROWS_AS(partition_by_labels_louvain(g, 7, 0), ConfigError);
  }
}

TEST_CASE("community partitioner skews labels harder than the balanced dealer") {
  double tv_louvain = 0.0, tv_iid = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SbmParams p;
    p.block_sizes = {50, 50};
    p.intra_p = 0.4;
    p.inter_p = 0.01;
    p.seed = seed;
    auto g = generate_sbm(p);
    tv_louvain += mean_client_label_tv(g, partition_by_labels_louvain(g, 2, seed));
    tv_iid += mean_client_label_tv(g, partition_label_iid(g, 2, seed));
  }
  CHECK(tv_louvain / 10 > tv_iid / 10);
}

TEST_CASE("balanced greedy partitioner") {
  SUBCASE("path of four splits at the middle edge") {
    EdgeList path = {{0, 1}, {1, 2}, {2, 3}};
    auto g = bare(4, path);
    auto r = partition_balanced_greedy(g, 2, 3);
    CHECK(r.assignment == std::vector<int>{0, 0, 1, 1});
    CHECK(cut_edges(g, r.assignment) == 1);
  }

  SUBCASE("long path cuts exactly K-1 edges") {
    EdgeList path;
    for (std::uint32_t i = 0; i + 1 < 100; ++i) path.emplace_back(i, i + 1);
    auto g = bare(100, path);
    auto r = partition_balanced_greedy(g, 4, 3);
    CHECK(cut_edges(g, r.assignment) == 3);
    for (const auto& s : r.shards) CHECK(s.node_global_ids.size() == 25);
  }

  SUBCASE("K equal to n gives singletons") {
    auto g = bare(4, {{0, 1}, {1, 2}, {2, 3}});
    auto r = partition_balanced_greedy(g, 4, 3);
    for (const auto& s : r.shards) CHECK(s.node_global_ids.size() == 1);
  }

  SUBCASE("sizes within one node of n/K and cut below the random baseline") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      CAPTURE(seed);
      SbmParams p;  // one block at p = 0.05 is just an Erdos-Renyi draw
      p.block_sizes = {100};
      p.intra_p = 0.05;
      p.seed = seed;
      auto g = generate_sbm(p);
      auto r = partition_balanced_greedy(g, 4, seed);

      double same_pair = 0.0;
      for (const auto& s : r.shards) {
        auto nk = double(s.node_global_ids.size());
        CHECK(std::abs(nk - 25.0) <= 1.0);
        same_pair += nk * (nk - 1.0);
      }
      double m = double(g.num_edges());
      double expected_random_cut = m * (1.0 - same_pair / (100.0 * 99.0));
      CHECK(double(cut_edges(g, r.assignment)) <= expected_random_cut);
    }
  }

  SUBCASE("K above node count rejected") {
    auto g = bare(3, {{0, 1}});
    CHECK_THROWS_AS(partition_balanced_greedy(g, 4, 0), ConfigError);
  }
}

namespace {

// n classes of 100 nodes each, no edges needed for label-axis tests
MultimodalGraph class_blob(int num_classes, std::size_t per_class) {
  std::vector<int> labels;
  for (int c = 0; c < num_classes; ++c) labels.insert(labels.end(), per_class, c);
  const std::size_t n = labels.size();
  return make_labeled_graph(n, {}, std::move(labels), num_classes);
}

}  // namespace

TEST_CASE("dirichlet label partitioner") {
  SUBCASE("huge concentration approaches the global histogram") {
    auto g = class_blob(10, 100);
    auto r = partition_label_dirichlet(g, 4, 1e6, 11);
    const auto global = label_histogram(g);
    for (const auto& s : r.shards)
      CHECK(total_variation(label_histogram(s.graph), global) < 0.05);
  }

  SUBCASE("K=1 takes everything regardless of alpha") {
    auto g = class_blob(3, 5);
    for (double alpha : {0.1, 1.0, 100.0}) {
      auto r = partition_label_dirichlet(g, 1, alpha, 2);
      CHECK(r.shards[0].node_global_ids.size() == 15);
    }
  }

  SUBCASE("small concentration makes clients class-dominated") {
    auto g = class_blob(10, 100);
    double mean_max_share = 0.0;
    std::size_t clients = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      auto r = partition_label_dirichlet(g, 10, 0.1, seed);
      for (const auto& s : r.shards) {
        auto hist = label_histogram(s.graph);
        double total = double(s.graph.num_nodes);
        double top = double(*std::max_element(hist.begin(), hist.end()));
        mean_max_share += top / total;
        ++clients;
      }
    }
    CHECK(mean_max_share / double(clients) > 0.5);
  }

  SUBCASE("label skew relaxes as alpha grows") {
    auto g = class_blob(10, 100);
    std::vector<double> mean_tv;
    for (double alpha : {0.1, 1.0, 10.0, 1000.0}) {
      double acc = 0.0;
      for (std::uint64_t seed = 1; seed <= 20; ++seed)
        acc += mean_client_label_tv(g, partition_label_dirichlet(g, 8, alpha, seed));
      mean_tv.push_back(acc / 20.0);
    }
    for (std::size_t i = 0; i + 1 < mean_tv.size(); ++i) CHECK(mean_tv[i + 1] < mean_tv[i]);
  }

  SUBCASE("every client ends up nonempty") {
    auto g = class_blob(2, 10);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto r = partition_label_dirichlet(g, 10, 0.05, seed);
      for (const auto& s : r.shards) CHECK(s.node_global_ids.size() > 0);
    }
  }

  SUBCASE("rejects fewer labeled nodes than clients") {
    auto g = class_blob(1, 3);
    CHECK_THROWS_AS(partition_label_dirichlet(g, 4, 1.0, 0), ConfigError);
    CHECK_THROWS_AS(partition_label_dirichlet(g, 2, 0.0, 0), ConfigError);
  }
}

TEST_CASE("balanced label dealer") {
  SUBCASE("divisible case is exact") {
    auto g = class_blob(2, 10);
    auto r = partition_label_iid(g, 5, 4);
    for (const auto& s : r.shards) {
      auto hist = label_histogram(s.graph);
      REQUIRE(hist.size() == 2);
      CHECK(hist[0] == 2);
      CHECK(hist[1] == 2);
    }
  }

  SUBCASE("uneven classes land within one of the even share") {
    std::vector<int> labels;
    labels.insert(labels.end(), 7, 0);
    labels.insert(labels.end(), 8, 1);
    labels.insert(labels.end(), 9, 2);
    auto g = make_labeled_graph(24, {}, labels, 3);
    std::vector<std::size_t> n_c = {7, 8, 9};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto r = partition_label_iid(g, 4, seed);
      std::vector<std::size_t> class_total(3, 0);
      for (const auto& s : r.shards) {
        auto hist = label_histogram(s.graph);
        for (int c = 0; c < 3; ++c) {
          CHECK(hist[c] >= n_c[c] / 4);
          CHECK(hist[c] <= (n_c[c] + 3) / 4);
          class_total[c] += hist[c];
        }
      }
      CHECK(class_total == n_c);
    }
  }

  SUBCASE("K=1 preserves the global histogram") {
    auto g = class_blob(4, 6);
    auto r = partition_label_iid(g, 1, 9);
    CHECK(label_histogram(r.shards[0].graph) == label_histogram(g));
  }

  SUBCASE("K above node count rejected") {
    auto g = class_blob(1, 3);
    CHECK_THROWS_AS(partition_label_iid(g, 4, 0), ConfigError);
  }
}

TEST_CASE("modality dirichlet masking") {
  auto fresh_shards = [](std::uint64_t graph_seed, std::vector<std::size_t> dims, int num_clients) {
    auto g = sbm_with_features({60, 60}, 0.2, 0.02, std::move(dims), graph_seed);
    return partition_label_iid(g, num_clients, graph_seed + 1).shards;
  };

  SUBCASE("huge concentration keeps nearly everything") {
    double masked = 0.0, total = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      auto shards = fresh_shards(3, {4, 3}, 8);
      apply_modality_noniid(shards, 1e6, seed);
      for (const auto& s : shards)
        for (std::size_t i = 0; i < s.graph.num_nodes; ++i)
          for (std::size_t m = 0; m < 2; ++m) {
            masked += s.graph.modality_mask(i, m) == 0;
            total += 1.0;
          }
    }
    CHECK(masked / total < 0.02);
  }

  SUBCASE("masks only ever turn off, masked rows are zeroed, kept rows intact") {
    auto shards = fresh_shards(5, {4, 3, 2}, 4);
    std::vector<ShardSnapshot> before;
    for (const auto& s : shards) before.emplace_back(s);

    apply_modality_noniid(shards, 0.05, 99);
    for (std::size_t k = 0; k < shards.size(); ++k) {
      const auto& g = shards[k].graph;
      for (std::size_t i = 0; i < g.num_nodes; ++i) {
        bool any = false;
        for (std::size_t m = 0; m < 3; ++m) {
          bool now = g.modality_mask(i, m) != 0;
          any |= now;
          CHECK(!(now && !before[k].mask[i * 3 + m]));  // never re-enables lost data
          const float* row = g.features[m].row(i);
          const float* old = before[k].features[m].data() + i * g.features[m].cols();
          if (now) {
            CHECK(std::memcmp(row, old, g.features[m].cols() * sizeof(float)) == 0);
          } else {
            for (std::size_t d = 0; d < g.features[m].cols(); ++d) CHECK(row[d] == 0.0f);
          }
        }
        CHECK(any);  // at least one modality always survives
      }
    }
  }

  SUBCASE("near-zero concentration usually wipes one modality completely") {
    int one_sided = 0;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
      auto shards = fresh_shards(7, {4, 3}, 1);
      apply_modality_noniid(shards, 0.003, seed);
      const auto& g = shards[0].graph;
      std::size_t cov0 = 0, cov1 = 0;
      for (std::size_t i = 0; i < g.num_nodes; ++i) {
        cov0 += g.modality_mask(i, 0);
        cov1 += g.modality_mask(i, 1);
      }
      bool all0 = cov0 == g.num_nodes, all1 = cov1 == g.num_nodes;
      bool none0 = cov0 == 0, none1 = cov1 == 0;
      if ((all0 && none1) || (all1 && none0)) ++one_sided;
    }
    CHECK(one_sided >= 20);
  }

  SUBCASE("low concentration spreads coverage wider across clients than high") {
    auto client_variance = [](const std::vector<ClientShard>& shards, std::size_t m) {
      std::vector<double> cov;
      for (const auto& s : shards) {
        double c = 0;
        for (std::size_t i = 0; i < s.graph.num_nodes; ++i) c += s.graph.modality_mask(i, m);
        cov.push_back(c / double(s.graph.num_nodes));
      }
      double mean = 0;
      for (double c : cov) mean += c;
      mean /= double(cov.size());
      double var = 0;
      for (double c : cov) var += (c - mean) * (c - mean);
      return var / double(cov.size());
    };

    double var_low = 0.0, var_high = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      auto a = fresh_shards(11, {4, 3}, 8);
      auto b = a;
      apply_modality_noniid(a, 0.3, seed);
      apply_modality_noniid(b, 100.0, seed);
      for (std::size_t m = 0; m < 2; ++m) {
        var_low += client_variance(a, m);
        var_high += client_variance(b, m);
      }
    }
    CHECK(var_low > var_high);
  }

  SUBCASE("needs two modalities and positive concentration") {
    auto shards = fresh_shards(2, {4}, 2);
    CHECK_THROWS_AS(apply_modality_noniid(shards, 0.3, 0), ConfigError);
    auto ok = fresh_shards(2, {4, 3}, 2);
    CHECK_THROWS_AS(apply_modality_noniid(ok, 0.0, 0), ConfigError);
  }
}

TEST_CASE("fixed-rate modality removal") {
  auto make_shards = [](std::uint64_t seed) {
    auto g = sbm_with_features({10, 10}, 0.3, 0.05, {4, 3}, seed);
    return partition_label_iid(g, 2, seed + 1).shards;  // two clients of 10
  };

  SUBCASE("rate zero is a byte-level no-op") {
    auto shards = make_shards(1);
    std::vector<ShardSnapshot> before;
    for (const auto& s : shards) before.emplace_back(s);
    apply_missing_rate(shards, "m0", 0.0, 5);
    for (std::size_t k = 0; k < shards.size(); ++k)
      CHECK(ShardSnapshot(shards[k]) == before[k]);
  }

  SUBCASE("rate one wipes the named modality everywhere") {
    auto shards = make_shards(2);
    apply_missing_rate(shards, "m1", 1.0, 5);
    for (const auto& s : shards)
      for (std::size_t i = 0; i < s.graph.num_nodes; ++i) {
        CHECK(s.graph.modality_mask(i, 1) == 0);
        CHECK(s.graph.modality_mask(i, 0) == 1);  // other modality untouched
        for (std::size_t d = 0; d < s.graph.features[1].cols(); ++d)
          CHECK(s.graph.features[1](i, d) == 0.0f);
      }
  }

  SUBCASE("half rate on ten nodes masks exactly five per client") {
    auto shards = make_shards(3);
    apply_missing_rate(shards, "m0", 0.5, 5);
    for (const auto& s : shards) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < s.graph.num_nodes; ++i)
        off += s.graph.modality_mask(i, 0) == 0;
      CHECK(off == 5);
    }
  }

  SUBCASE("masked sets nest as the rate grows under one seed") {
    auto low = make_shards(4);
    auto high = make_shards(4);
    apply_missing_rate(low, "m0", 0.3, 5);
    apply_missing_rate(high, "m0", 0.7, 5);
    for (std::size_t k = 0; k < low.size(); ++k)
      for (std::size_t i = 0; i < low[k].graph.num_nodes; ++i)
        if (low[k].graph.modality_mask(i, 0) == 0)
          CHECK(high[k].graph.modality_mask(i, 0) == 0);
  }

  SUBCASE("unknown modality name rejected") {
    auto shards = make_shards(5);
    CHECK_THROWS_AS(apply_missing_rate(shards, "audio", 0.5, 5), ConfigError);
    CHECK_THROWS_AS(apply_missing_rate(shards, "m0", 1.5, 5), ConfigError);
  }
}

TEST_CASE("topology axis") {
  SUBCASE("available keeps the induced edges untouched") {
    auto g = sbm_with_features({20, 20}, 0.3, 0.05, {4}, 6);
    auto shards = partition_label_iid(g, 4, 7).shards;
    std::vector<ShardSnapshot> before;
    for (const auto& s : shards) before.emplace_back(s);
    apply_topology_axis(shards, TopologyAxis::Available, {}, 123);
    for (std::size_t k = 0; k < shards.size(); ++k)
      CHECK(ShardSnapshot(shards[k]) == before[k]);
  }

  SUBCASE("degenerate block rebuild links exactly the same-label pair") {
    ClientShard shard;
    shard.graph = make_labeled_graph(3, {{0, 2}, {1, 2}}, {0, 0, 1}, 2);
    std::vector<ClientShard> shards = {shard};
    ReconstructParams params;
    params.intra_p = 1.0;
    params.inter_p = 0.0;
    apply_topology_axis(shards, TopologyAxis::Sbm, params, 3);
    CHECK(shards[0].graph.edges == EdgeList{{0, 1}});
  }

  SUBCASE("rebuilt edge counts stay inside the configured density band") {
    ReconstructParams params;
    params.intra_p = 0.3;
    params.inter_p = 0.05;
    // 2 blocks of 20: expect 2*C(20,2)*0.3 + 400*0.05 = 134 edges, sd ~ 10
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      CAPTURE(seed);
      auto g = sbm_with_features({20, 20}, 0.4, 0.01, {4}, seed);
      auto shards = partition_label_iid(g, 1, seed).shards;
      apply_topology_axis(shards, TopologyAxis::Sbm, params, seed);
      auto count = double(shards[0].graph.num_edges());
      CHECK(count >= 84.0);
      CHECK(count <= 184.0);
      validate_graph(shards[0].graph);
    }
  }

  SUBCASE("latent-position rebuild also yields a canonical graph") {
    auto g = sbm_with_features({15, 15}, 0.4, 0.01, {4}, 8);
    auto shards = partition_label_iid(g, 2, 9).shards;
    apply_topology_axis(shards, TopologyAxis::Rdpg, {}, 10);
    for (const auto& s : shards) validate_graph(s.graph);
  }
}

TEST_CASE("scenario cell hashing") {
  ScenarioConfig a;
  a.num_clients = 4;
  CHECK(scenario_hash(a).size() == 16);
  CHECK(scenario_hash(a) == scenario_hash(a));

  ScenarioConfig b = a;
  b.modality_axis = ModalityAxis::NonIid;
  CHECK(scenario_hash(b) != scenario_hash(a));
  b = a;
  b.alpha = 0.25;
  CHECK(scenario_hash(b) != scenario_hash(a));
  b = a;
  b.master_seed = 1;
  CHECK(scenario_hash(b) != scenario_hash(a));
}

TEST_CASE("scenario composition") {
  auto g = sbm_with_features({60, 60}, 0.3, 0.02, {4, 3}, 21);

  SUBCASE("the all-benign cell changes nothing") {
    ScenarioConfig cfg;
    cfg.num_clients = 4;
    cfg.master_seed = 5;
    auto r = build_scenario(g, cfg);
    REQUIRE(r.shards.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(r.axis_report.label_tv[k] < 0.05);
      CHECK(r.axis_report.edge_retention[k] == 1.0);
      CHECK(r.axis_report.modality_coverage[k][0] == 1.0);
      CHECK(r.axis_report.modality_coverage[k][1] == 1.0);
    }
  }

  SUBCASE("the all-hostile cell skews every axis") {
    ScenarioConfig cfg;
    cfg.modality_axis = ModalityAxis::NonIid;
    cfg.beta = 0.3;
    cfg.topology_axis = TopologyAxis::Sbm;
    cfg.label_axis = LabelAxis::Dirichlet;
    cfg.alpha = 0.1;
    cfg.num_clients = 8;
    cfg.master_seed = 5;
    auto r = build_scenario(g, cfg);

    double max_tv = 0.0, min_cov = 1.0, min_ret = 1e9;
    for (std::size_t k = 0; k < 8; ++k) {
      max_tv = std::max(max_tv, r.axis_report.label_tv[k]);
      for (double c : r.axis_report.modality_coverage[k]) min_cov = std::min(min_cov, c);
      min_ret = std::min(min_ret, r.axis_report.edge_retention[k]);
    }
    CHECK(max_tv > 0.2);
    CHECK(min_cov < 0.9);
    CHECK(min_ret >= 0.0);
    CHECK(min_ret < 0.9);  // default rebuild density is far from the source graph
  }

  SUBCASE("rebuilding twice is byte-identical") {
    ScenarioConfig cfg;
    cfg.modality_axis = ModalityAxis::NonIid;
    cfg.topology_axis = TopologyAxis::Rdpg;
    cfg.label_axis = LabelAxis::Dirichlet;
    cfg.num_clients = 6;
    cfg.master_seed = 77;
    auto r1 = build_scenario(g, cfg);
    auto r2 = build_scenario(g, cfg);
    CHECK(r1.assignment == r2.assignment);
    for (std::size_t k = 0; k < r1.shards.size(); ++k) {
      CHECK(ShardSnapshot(r1.shards[k]) == ShardSnapshot(r2.shards[k]));
      CHECK(r1.shards[k].train_mask == r2.shards[k].train_mask);
      CHECK(r1.shards[k].val_mask == r2.shards[k].val_mask);
      CHECK(r1.shards[k].test_mask == r2.shards[k].test_mask);
      CHECK(r1.shards[k].provenance == r2.shards[k].provenance);
    }
  }

  SUBCASE("every axis combination builds a consistent shard set") {
    for (auto modality : {ModalityAxis::Iid, ModalityAxis::NonIid}) {
      for (auto topology : {TopologyAxis::Available, TopologyAxis::Sbm}) {
        for (auto label : {LabelAxis::Iid, LabelAxis::Dirichlet}) {
          ScenarioConfig cfg;
          cfg.modality_axis = modality;
          cfg.topology_axis = topology;
          cfg.label_axis = label;
          cfg.num_clients = 4;
          cfg.master_seed = 31;
          auto r = build_scenario(g, cfg);

          std::set<std::uint32_t> seen;
          std::size_t total = 0;
          for (const auto& s : r.shards) {
            validate_graph(s.graph);
            seen.insert(s.node_global_ids.begin(), s.node_global_ids.end());
            total += s.node_global_ids.size();
            CHECK(s.provenance.find(scenario_hash(cfg)) != std::string::npos);
            REQUIRE(s.train_mask.size() == s.graph.num_nodes);
            for (std::size_t i = 0; i < s.graph.num_nodes; ++i)
              CHECK(s.train_mask[i] + s.val_mask[i] + s.test_mask[i] <= 1);
          }
          CHECK(total == g.num_nodes);
          CHECK(seen.size() == g.num_nodes);
          for (int a : r.assignment) {
            CHECK(a >= 0);
            CHECK(a < 4);
          }
        }
      }
    }
  }
}
