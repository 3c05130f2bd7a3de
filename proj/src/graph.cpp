#include "mmfgl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

void validate_graph(const MultimodalGraph& g) {
  for (const auto& [u, v] : g.edges) {
    if (u >= g.num_nodes || v >= g.num_nodes)
      throw StructuralError("edge endpoint out of range: (" + std::to_string(u) + "," +
                            std::to_string(v) + ") with " + std::to_string(g.num_nodes) +
                            " nodes");
    if (u == v) throw StructuralError("self-loop survived canonicalization");
    if (u > v) throw StructuralError("edge not stored as u < v");
  }
  for (std::size_t i = 1; i < g.edges.size(); ++i) {
    if (!(g.edges[i - 1] < g.edges[i]))
      throw StructuralError("edges not sorted or contain duplicates");
  }
  if (g.features.size() != g.modalities.size())
    throw StructuralError("feature matrix count does not match modality count");
  for (std::size_t m = 0; m < g.features.size(); ++m) {
    if (g.features[m].rows() != g.num_nodes)
      throw StructuralError("modality " + g.modalities[m].name + " has " +
                            std::to_string(g.features[m].rows()) + " rows, expected " +
                            std::to_string(g.num_nodes));
    if (g.features[m].cols() != g.modalities[m].feature_dim)
      throw StructuralError("modality " + g.modalities[m].name + " feature_dim mismatch");
  }
  if (!g.modalities.empty()) {
    if (g.modality_mask.rows() != g.num_nodes || g.modality_mask.cols() != g.modalities.size())
      throw StructuralError("modality_mask shape mismatch");
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
      for (std::size_t m = 0; m < g.modalities.size(); ++m) {
        if (g.modality_mask(i, m)) continue;
        const float* row = g.features[m].row(i);
        for (std::size_t j = 0; j < g.features[m].cols(); ++j) {
          if (row[j] != 0.0f)
            throw StructuralError("masked-out feature row " + std::to_string(i) +
                                  " of modality " + g.modalities[m].name + " is not zero");
        }
      }
    }
  }
  if (!g.labels.empty() && g.labels.size() != g.num_nodes)
    throw StructuralError("label vector length mismatch");
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    int y = g.labels[i];
    if (y == kUnlabeled) continue;
    if (y < 0 || y >= g.num_classes)
      throw StructuralError("label " + std::to_string(y) + " at node " + std::to_string(i) +
                            " outside [0, " + std::to_string(g.num_classes) + ")");
  }
}

MultimodalGraph canonicalize(MultimodalGraph g) {
  for (auto& [u, v] : g.edges) {
    if (u >= g.num_nodes || v >= g.num_nodes)
      throw StructuralError("edge endpoint out of range: (" + std::to_string(u) + "," +
                            std::to_string(v) + ")");
    if (u > v) std::swap(u, v);
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                               [](const auto& e) { return e.first == e.second; }),
                g.edges.end());
  validate_graph(g);
  return g;
}

MultimodalGraph induce_subgraph(const MultimodalGraph& g,
                                const std::vector<std::uint32_t>& node_ids) {
  std::unordered_map<std::uint32_t, std::uint32_t> local;
  local.reserve(node_ids.size());
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    std::uint32_t id = node_ids[i];
    if (id >= g.num_nodes)
      throw StructuralError("induce_subgraph: node id " + std::to_string(id) + " out of range");
    if (!local.emplace(id, static_cast<std::uint32_t>(i)).second)
      throw StructuralError("induce_subgraph: duplicate node id " + std::to_string(id));
  }

  MultimodalGraph out;
  out.num_nodes = node_ids.size();
  out.modalities = g.modalities;
  out.num_classes = g.num_classes;

  for (const auto& [u, v] : g.edges) {
    auto iu = local.find(u);
    if (iu == local.end()) continue;
    auto iv = local.find(v);
    if (iv == local.end()) continue;
    std::uint32_t a = iu->second, b = iv->second;
    if (a > b) std::swap(a, b);
    out.edges.emplace_back(a, b);
  }
  std::sort(out.edges.begin(), out.edges.end());

  out.features.reserve(g.features.size());
  for (const auto& feat : g.features) {
    Mat<float> f(node_ids.size(), feat.cols());
    for (std::size_t i = 0; i < node_ids.size(); ++i) {
      const float* src = feat.row(node_ids[i]);
      std::copy(src, src + feat.cols(), f.row(i));
    }
    out.features.push_back(std::move(f));
  }
  if (!g.modalities.empty()) {
    out.modality_mask = Mat<std::uint8_t>(node_ids.size(), g.modalities.size());
    for (std::size_t i = 0; i < node_ids.size(); ++i)
      for (std::size_t m = 0; m < g.modalities.size(); ++m)
        out.modality_mask(i, m) = g.modality_mask(node_ids[i], m);
  }
  if (!g.labels.empty()) {
    out.labels.resize(node_ids.size());
    for (std::size_t i = 0; i < node_ids.size(); ++i) out.labels[i] = g.labels[node_ids[i]];
  }
  return out;
}

std::vector<std::size_t> degrees(const MultimodalGraph& g) {
  std::vector<std::size_t> deg(g.num_nodes, 0);
  for (const auto& [u, v] : g.edges) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

std::size_t ClientShard::num_train() const {
  std::size_t n = 0;
  for (auto b : train_mask) n += b;
  return n;
}

void assign_split_masks(ClientShard& shard, std::uint64_t seed) {
  const std::size_t n = shard.graph.num_nodes;
  shard.train_mask.assign(n, 0);
  shard.val_mask.assign(n, 0);
  shard.test_mask.assign(n, 0);

  std::vector<std::uint32_t> labeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (!shard.graph.labels.empty() && shard.graph.labels[i] != kUnlabeled)
      labeled.push_back(static_cast<std::uint32_t>(i));
  }
  Rng rng(seed);
  rng.shuffle(labeled);

  const std::size_t total = labeled.size();
  const std::size_t n_train = static_cast<std::size_t>(std::lround(0.6 * double(total)));
  const std::size_t n_val = static_cast<std::size_t>(std::lround(0.2 * double(total)));
  for (std::size_t i = 0; i < total; ++i) {
    if (i < n_train)
      shard.train_mask[labeled[i]] = 1;
    else if (i < n_train + n_val)
      shard.val_mask[labeled[i]] = 1;
    else
      shard.test_mask[labeled[i]] = 1;
  }
}

}  // namespace mmfgl
