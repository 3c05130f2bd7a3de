#pragma once

#include <cstdint>
#include <vector>

#include "mmfgl/graph.hpp"
#include "mmfgl/synth.hpp"

namespace mmfgl {

enum class ModalityAxis { Iid, NonIid };
enum class TopologyAxis { Available, Sbm, Rdpg };
enum class LabelAxis { Iid, Louvain, Balanced, Dirichlet };

// One cell of the modality x topology x label scenario matrix.
struct ScenarioConfig {
  ModalityAxis modality_axis = ModalityAxis::Iid;
  double beta = 0.3;  // modality Dirichlet concentration
  TopologyAxis topology_axis = TopologyAxis::Available;
  ReconstructParams topo_params;
  LabelAxis label_axis = LabelAxis::Iid;
  double alpha = 0.5;  // label Dirichlet concentration
  int num_clients = 1;
  std::uint64_t master_seed = 0;
};

// Short stable hash of the scenario cell, recorded in shard provenance.
std::string scenario_hash(const ScenarioConfig& config);

struct AxisReport {
  std::vector<std::vector<std::size_t>> label_hist;   // client x class
  std::vector<double> label_tv;                       // TV distance from global
  std::vector<std::vector<double>> modality_coverage; // client x modality
  std::vector<double> edge_retention;                 // edges kept / induced
};

struct PartitionResult {
  std::vector<ClientShard> shards;
  std::vector<int> assignment;  // global node id -> client id
  AxisReport axis_report;
};

// Two-phase Louvain community detection on the unweighted graph.  Nodes are
// scanned in ascending id, a move needs strictly positive modularity gain,
// and equal gains resolve to the lowest community id, so the result is
// deterministic.  Community ids are compacted in order of first appearance.
// An edgeless graph puts every node in its own community.
std::vector<int> louvain(const MultimodalGraph& graph);

// Modularity of a given partition (used by louvain internally and exposed
// for inspection/testing).
double modularity(const MultimodalGraph& graph, const std::vector<int>& communities);

// Louvain communities greedily bin-packed into K clients balancing node
// counts; oversized communities are split when there are fewer than K.
PartitionResult partition_by_labels_louvain(const MultimodalGraph& graph, int num_clients,
                                            std::uint64_t seed);

// Balanced low-cut partitioner standing in for METIS: regions grown by BFS
// from the lowest unassigned node id, always absorbing the frontier node
// with the most edges into the region, subject to |size_k - n/K| <= 1.
// Fully deterministic; the seed only enters the provenance record.
PartitionResult partition_balanced_greedy(const MultimodalGraph& graph, int num_clients,
                                          std::uint64_t seed);

// Label-skewed split: per class, client proportions ~ Dirichlet(alpha 1_K),
// nodes assigned by largest-remainder rounding.  Empty clients are repaired
// by moving one node from the largest client.
PartitionResult partition_label_dirichlet(const MultimodalGraph& graph, int num_clients,
                                          double alpha, std::uint64_t seed);

// Label-balanced split: per class, shuffle and deal round-robin, so
// per-client class counts differ by at most 1 from n_c/K.
PartitionResult partition_label_iid(const MultimodalGraph& graph, int num_clients,
                                    std::uint64_t seed);

// Per client k draws rho_k ~ Dirichlet(beta 1_M); node-modality pairs keep
// modality m with prob min(1, M rho_km).  Masked rows are zeroed.  Every
// node keeps at least one of its previously present modalities (the one
// with the highest rho).
void apply_modality_noniid(std::vector<ClientShard>& shards, double beta, std::uint64_t seed);

// Masks the named modality on exactly round(rate * n_k) nodes per client,
// uniform without replacement; selections are nested as rate grows under a
// fixed seed.
void apply_missing_rate(std::vector<ClientShard>& shards, const std::string& target_modality,
                        double rate, std::uint64_t seed);

// Available keeps induced edges; Sbm/Rdpg replace every shard's edge set
// with a label-driven reconstruction.
void apply_topology_axis(std::vector<ClientShard>& shards, TopologyAxis axis,
                         const ReconstructParams& params, std::uint64_t seed);

// Composes label partition -> topology transform -> modality transform,
// attaches the axis report, and derives one sub-seed per stage from
// config.master_seed.  Pure function of (graph, config).
PartitionResult build_scenario(const MultimodalGraph& graph, const ScenarioConfig& config);

// Shared helpers for label statistics.
std::vector<std::size_t> label_histogram(const MultimodalGraph& graph);
double total_variation(const std::vector<std::size_t>& hist_a,
                       const std::vector<std::size_t>& hist_b);

}  // namespace mmfgl
