#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfgl/graph.hpp"

namespace mmfgl {

// Robustness knobs for degradation studies.  Every operator at ratio (or
// sigma) zero returns its input unchanged, and each touches only its own
// surface: edge operators never change features or labels, label operators
// never change edges, feature noise never changes masks.
enum class PerturbKind {
  EdgeNoise,        // rewire round(ratio*m) edges, count preserving
  EdgeSparsify,     // delete round(ratio*m) edges
  LabelNoise,       // flip round(ratio*|labeled|) labels to different ones
  LabelSparsify,    // drop round(ratio*|train|) nodes from the train mask
  FeatureNoise,     // add N(0, sigma^2) to present feature rows; ratio = sigma
  ModalityMissing,  // hide one modality on round(ratio*n) nodes per client
};

struct PerturbSpec {
  PerturbKind kind = PerturbKind::EdgeNoise;
  double ratio = 0.0;  // sigma when kind == FeatureNoise
  std::uint64_t seed = 0;
  std::string target_modality;  // ModalityMissing only

  // Range check: edge/label kinds accept [0, 0.9], ModalityMissing [0, 1],
  // FeatureNoise any nonnegative sigma.
  void validate() const;
};

struct EdgeNoiseResult {
  MultimodalGraph graph;
  std::size_t rewired = 0;
  std::size_t skipped = 0;  // picked edges whose kept endpoint had no free partner
};

// Rewires round(ratio*m) distinct edges: keep one endpoint (fair coin), move
// the other to a uniformly chosen non-adjacent node.  Edge count is
// preserved; rewiring a picked edge is skipped when the kept endpoint is
// already adjacent to every other node.
EdgeNoiseResult edge_noise(const MultimodalGraph& graph, double ratio, std::uint64_t seed);

// Deletes round(ratio*m) edges uniformly without replacement.
MultimodalGraph edge_sparsify(const MultimodalGraph& graph, double ratio, std::uint64_t seed);

// Gives round(ratio*|labeled|) labeled nodes a uniformly chosen different
// label.  Throws ConfigError when only one class exists.
MultimodalGraph label_noise(const MultimodalGraph& graph, double ratio, std::uint64_t seed);

struct LabelSparsifyResult {
  std::vector<std::uint8_t> train_mask;
  std::size_t removed = 0;
  bool clamped = false;  // the rule would have emptied the mask; one node kept
};

// Removes round(ratio*|train|) nodes from the train mask.  Validation and
// test masks are someone else's problem by contract.
LabelSparsifyResult label_sparsify(const std::vector<std::uint8_t>& train_mask, double ratio,
                                   std::uint64_t seed);

// Adds independent N(0, sigma^2) draws to every feature of every present
// (node, modality) row.  Hidden rows stay exactly zero.
MultimodalGraph feature_noise(const MultimodalGraph& graph, double sigma, std::uint64_t seed);

struct PerturbReport {
  std::size_t changed = 0;  // rewired / deleted / flipped / removed, summed over shards
  std::size_t skipped = 0;  // skipped rewires or clamped train masks
};

// Applies one perturbation to every shard, with per-shard seeds derived from
// spec.seed and the client id.
PerturbReport apply_perturb(std::vector<ClientShard>& shards, const PerturbSpec& spec);

struct SweepPoint {
  double ratio = 0.0;
  std::vector<double> values;  // one metric value per experiment seed
  double mean = 0.0;
  double stderr_mean = 0.0;  // sample std over seeds / sqrt(#seeds)
};

using SweepRunner =
    std::function<double(const std::vector<ClientShard>& shards, std::uint64_t seed)>;

// One experiment per (ratio, seed), each perturbed fresh from the base
// shards, never cumulatively.  Ratios must be ascending.  The per-seed
// perturbation seed is shared across ratios, so selections nest as the
// ratio grows and curves are comparable point to point.
std::vector<SweepPoint> sweep(const std::vector<ClientShard>& base, const PerturbSpec& proto,
                              const std::vector<double>& ratios,
                              const std::vector<std::uint64_t>& seeds, const SweepRunner& run);

}  // namespace mmfgl
