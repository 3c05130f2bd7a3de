#pragma once

#include <cstdint>
#include <vector>

#include "mmfgl/graph.hpp"

namespace mmfgl {

struct SbmParams {
  std::vector<std::size_t> block_sizes;
  double intra_p = 0.1;
  double inter_p = 0.01;
  std::uint64_t seed = 0;
};

struct RdpgParams {
  std::size_t latent_dim = 2;
  Mat<double> latent_positions;  // n x d, entries in [0,1]
  std::uint64_t seed = 0;
};

struct FeatureSynthParams {
  // means[c][m] is the Gaussian mean vector of class c in modality m.
  std::vector<std::vector<std::vector<float>>> means;
  double sigma = 1.0;
  std::vector<std::size_t> feature_dims;  // one per modality

  // Builds params where every modality in `informative` gets class-separated
  // means (class c points along axis c mod dim, scaled by `separation`) and
  // every other modality shares a zero mean across classes.
  static FeatureSynthParams make(int num_classes, const std::vector<std::size_t>& dims,
                                 double sigma, const std::vector<std::size_t>& informative,
                                 double separation);
};

// Stochastic block model draw: labels are block ids, no features attached.
// Each intra-block pair is an edge with prob intra_p, inter-block with
// inter_p.  Deterministic given params.seed.
MultimodalGraph generate_sbm(const SbmParams& params);

// Random dot product graph: edge (u,v) with prob clip(x_u . x_v, 0, 1).
// No labels, no features.
MultimodalGraph generate_rdpg(const RdpgParams& params);

// Attaches class-conditioned Gaussian features for every modality and marks
// all modalities present.  Requires every node to be labeled.
MultimodalGraph synthesize_features(MultimodalGraph graph, const FeatureSynthParams& params,
                                    std::uint64_t seed);

enum class ReconstructMethod { Sbm, Rdpg };

struct ReconstructParams {
  double intra_p = 0.1;
  double inter_p = 0.01;
  double rdpg_noise = 0.05;
};

// Rebuilds a shard's edge set from its labels alone (topology-unavailable
// path).  SBM method treats label groups as blocks; RDPG method places each
// node at sqrt(intra_p) times its class one-hot plus uniform noise, so the
// intra-class edge probability tracks intra_p.  Output is canonical
// (sorted, deduplicated, no self-loops).  A single-node shard yields [].
std::vector<std::pair<std::uint32_t, std::uint32_t>> reconstruct_topology(
    const std::vector<int>& labels, ReconstructMethod method, const ReconstructParams& params,
    std::uint64_t seed);

}  // namespace mmfgl
