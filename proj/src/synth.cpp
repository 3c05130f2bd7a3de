#include "mmfgl/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

FeatureSynthParams FeatureSynthParams::make(int num_classes, const std::vector<std::size_t>& dims,
                                            double sigma, const std::vector<std::size_t>& informative,
                                            double separation) {
  FeatureSynthParams p;
  p.sigma = sigma;
  p.feature_dims = dims;
  p.means.assign(static_cast<std::size_t>(num_classes), {});
  for (int c = 0; c < num_classes; ++c) {
    p.means[c].resize(dims.size());
    for (std::size_t m = 0; m < dims.size(); ++m) {
      std::vector<float> mu(dims[m], 0.0f);
      bool is_informative =
          std::find(informative.begin(), informative.end(), m) != informative.end();
      if (is_informative && dims[m] > 0)
        mu[static_cast<std::size_t>(c) % dims[m]] = static_cast<float>(separation);
      p.means[c][m] = std::move(mu);
    }
  }
  return p;
}

MultimodalGraph generate_sbm(const SbmParams& params) {
  if (params.block_sizes.empty()) throw ConfigError("generate_sbm: no blocks given");
  for (std::size_t s : params.block_sizes)
    if (s == 0) throw ConfigError("generate_sbm: empty block");
  if (params.inter_p > params.intra_p)
    std::fprintf(stderr, "warning: generate_sbm with inter_p %.4f > intra_p %.4f (heterophilous)\n",
                 params.inter_p, params.intra_p);

  MultimodalGraph g;
  g.num_classes = static_cast<int>(params.block_sizes.size());
  std::vector<int> block_of;
  for (std::size_t b = 0; b < params.block_sizes.size(); ++b)
    block_of.insert(block_of.end(), params.block_sizes[b], static_cast<int>(b));
  g.num_nodes = block_of.size();
  g.labels = block_of;

  Rng rng(params.seed);
  for (std::uint32_t u = 0; u + 1 < g.num_nodes; ++u) {
    for (std::uint32_t v = u + 1; v < g.num_nodes; ++v) {
      double p = block_of[u] == block_of[v] ? params.intra_p : params.inter_p;
      if (rng.bernoulli(p)) g.edges.emplace_back(u, v);
    }
  }
  return canonicalize(std::move(g));
}

MultimodalGraph generate_rdpg(const RdpgParams& params) {
  const auto& x = params.latent_positions;
  if (x.cols() != params.latent_dim)
    throw DimensionMismatchError("generate_rdpg: positions have " + std::to_string(x.cols()) +
                                 " columns, latent_dim is " + std::to_string(params.latent_dim));

  MultimodalGraph g;
  g.num_nodes = x.rows();
  Rng rng(params.seed);
  for (std::uint32_t u = 0; u + 1 < g.num_nodes; ++u) {
    for (std::uint32_t v = u + 1; v < g.num_nodes; ++v) {
      double dot = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) dot += x(u, k) * x(v, k);
      double p = std::clamp(dot, 0.0, 1.0);
      if (rng.bernoulli(p)) g.edges.emplace_back(u, v);
    }
  }
  return canonicalize(std::move(g));
}

MultimodalGraph synthesize_features(MultimodalGraph g, const FeatureSynthParams& params,
                                    std::uint64_t seed) {
  if (g.labels.size() != g.num_nodes)
    throw StructuralError("synthesize_features: graph has no label vector");
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (g.labels[i] == kUnlabeled)
      throw StructuralError("synthesize_features: node " + std::to_string(i) + " is unlabeled");
  if (params.means.size() != static_cast<std::size_t>(g.num_classes))
    throw ConfigError("synthesize_features: means cover " + std::to_string(params.means.size()) +
                      " classes, graph has " + std::to_string(g.num_classes));

  g.modalities.clear();
  g.features.clear();
  for (std::size_t m = 0; m < params.feature_dims.size(); ++m)
    g.modalities.push_back({"m" + std::to_string(m), params.feature_dims[m]});
  g.modality_mask = Mat<std::uint8_t>(g.num_nodes, g.modalities.size(), 1);

  for (std::size_t m = 0; m < g.modalities.size(); ++m) {
    const std::size_t dim = params.feature_dims[m];
    for (const auto& class_means : params.means)
      if (class_means.at(m).size() != dim)
        throw ConfigError("synthesize_features: mean vector length mismatch in modality " +
                          std::to_string(m));
    Mat<float> f(g.num_nodes, dim);
    Rng rng(derive_seed(seed, "feat", m));
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
      const auto& mu = params.means[static_cast<std::size_t>(g.labels[i])][m];
      float* row = f.row(i);
      for (std::size_t j = 0; j < dim; ++j)
        row[j] = static_cast<float>(mu[j] + params.sigma * rng.normal());
    }
    g.features.push_back(std::move(f));
  }
  validate_graph(g);
  return g;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> reconstruct_topology(
    const std::vector<int>& labels, ReconstructMethod method, const ReconstructParams& params,
    std::uint64_t seed) {
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == kUnlabeled)
      throw StructuralError("reconstruct_topology: node " + std::to_string(i) + " is unlabeled");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  if (n < 2) return edges;

  Rng rng(seed);
  if (method == ReconstructMethod::Sbm) {
    for (std::uint32_t u = 0; u + 1 < n; ++u) {
      for (std::uint32_t v = u + 1; v < n; ++v) {
        double p = labels[u] == labels[v] ? params.intra_p : params.inter_p;
        if (rng.bernoulli(p)) edges.emplace_back(u, v);
      }
    }
    return edges;
  }

  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  const double scale = std::sqrt(std::clamp(params.intra_p, 0.0, 1.0));
  Mat<double> x(n, static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < num_classes; ++c)
      x(i, static_cast<std::size_t>(c)) = rng.uniform(0.0, params.rdpg_noise);
    x(i, static_cast<std::size_t>(labels[i])) += scale;
  }
  for (std::uint32_t u = 0; u + 1 < n; ++u) {
    for (std::uint32_t v = u + 1; v < n; ++v) {
      double dot = 0.0;
      for (int c = 0; c < num_classes; ++c)
        dot += x(u, static_cast<std::size_t>(c)) * x(v, static_cast<std::size_t>(c));
      if (rng.bernoulli(std::clamp(dot, 0.0, 1.0))) edges.emplace_back(u, v);
    }
  }
  return edges;
}

}  // namespace mmfgl
