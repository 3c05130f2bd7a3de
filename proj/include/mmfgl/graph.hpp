#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmfgl/mat.hpp"

namespace mmfgl {

struct ModalityDesc {
  std::string name;
  std::size_t feature_dim = 0;
};

constexpr int kUnlabeled = -1;

// In-memory multimodal-attributed graph.  Node ids are dense 0..n-1, edges
// are undirected and stored canonically (u < v, lexicographically sorted,
// no duplicates, no self-loops).  Feature rows of absent modalities are kept
// as zeros; modality_mask is the source of truth for presence.
struct MultimodalGraph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<ModalityDesc> modalities;
  std::vector<Mat<float>> features;        // one n x f_m matrix per modality
  Mat<std::uint8_t> modality_mask;         // n x M, 1 = present
  std::vector<int> labels;                 // per node, kUnlabeled if absent
  int num_classes = 0;

  std::size_t num_modalities() const { return modalities.size(); }
  std::size_t num_edges() const { return edges.size(); }
};

// Sorts edges lexicographically with u < v, removes duplicates and
// self-loops.  Node order is unchanged.  Throws StructuralError on
// out-of-range endpoints, label values, or feature shape violations.
MultimodalGraph canonicalize(MultimodalGraph graph);

// Checks the MultimodalGraph invariants and throws StructuralError with a
// description of the first violation.  canonicalize() calls this at exit.
void validate_graph(const MultimodalGraph& graph);

// Subgraph on node_ids (distinct, in range), relabeled to local ids
// 0..k-1 preserving the input order of node_ids.  Keeps exactly the edges
// with both endpoints selected.
MultimodalGraph induce_subgraph(const MultimodalGraph& graph,
                                const std::vector<std::uint32_t>& node_ids);

// Degree of every node (undirected, no self-loops by invariant).
std::vector<std::size_t> degrees(const MultimodalGraph& graph);

// One client's slice of the global graph plus its split masks.
struct ClientShard {
  int client_id = 0;
  std::vector<std::uint32_t> node_global_ids;
  MultimodalGraph graph;                   // local ids 0..|nodes|-1
  std::vector<std::uint8_t> train_mask;    // over local nodes, disjoint,
  std::vector<std::uint8_t> val_mask;      // union subset of labeled nodes
  std::vector<std::uint8_t> test_mask;
  std::string provenance;                  // scenario hash + partition seed

  std::size_t num_train() const;
};

// Assigns 60/20/20 train/val/test masks over the shard's labeled nodes
// (plus/minus one node from rounding), seeded.
void assign_split_masks(ClientShard& shard, std::uint64_t seed);

}  // namespace mmfgl
