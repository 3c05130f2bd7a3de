#include "mmfgl/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mmfgl/error.hpp"
#include "mmfgl/partition.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

namespace {

std::uint64_t edge_key(std::uint32_t u, std::uint32_t v) {
  if (u > v) std::swap(u, v);
  return (std::uint64_t(u) << 32) | v;
}

double checked_ratio(double ratio, double hi, const char* what) {
  if (ratio < 0.0 || ratio > hi)
    throw ConfigError(std::string(what) + " ratio " + std::to_string(ratio) +
                      " outside [0, " + std::to_string(hi) + "]");
  return ratio;
}

}  // namespace

void PerturbSpec::validate() const {
  switch (kind) {
    case PerturbKind::EdgeNoise:
    case PerturbKind::EdgeSparsify:
    case PerturbKind::LabelNoise:
    case PerturbKind::LabelSparsify:
      checked_ratio(ratio, 0.9, "perturbation");
      break;
    case PerturbKind::ModalityMissing:
      checked_ratio(ratio, 1.0, "missing-rate");
      if (target_modality.empty())
        throw ConfigError("modality hiding needs a target modality name");
      break;
    case PerturbKind::FeatureNoise:
      if (ratio < 0.0) throw ConfigError("noise sigma must be nonnegative");
      break;
  }
}

EdgeNoiseResult edge_noise(const MultimodalGraph& graph, double ratio, std::uint64_t seed) {
  checked_ratio(ratio, 0.9, "rewiring");
  EdgeNoiseResult out;
  out.graph = graph;
  const std::size_t m = graph.num_edges();
  const auto count = std::size_t(std::lround(ratio * double(m)));
  if (count == 0) return out;

  std::unordered_set<std::uint64_t> edges;
  edges.reserve(2 * m);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> list = graph.edges;
  for (const auto& [u, v] : list) edges.insert(edge_key(u, v));

  Rng rng(seed);
  const std::vector<std::size_t> picks = rng.sample_without_replacement(m, count);
  const std::uint32_t n = std::uint32_t(graph.num_nodes);
  for (std::size_t idx : picks) {
    auto [u, v] = list[idx];
    const std::uint32_t keep = rng.bernoulli(0.5) ? u : v;
    // candidates: nodes not adjacent to the kept endpoint right now
    std::vector<std::uint32_t> open;
    for (std::uint32_t w = 0; w < n; ++w) {
      if (w == keep) continue;
      if (edges.count(edge_key(keep, w))) continue;
      open.push_back(w);
    }
    if (open.empty()) {
      out.skipped += 1;
      continue;
    }
    const std::uint32_t w = open[rng.uniform_int(open.size())];
    edges.erase(edge_key(u, v));
    edges.insert(edge_key(keep, w));
    list[idx] = {std::min(keep, w), std::max(keep, w)};
    out.rewired += 1;
  }
  out.graph.edges = std::move(list);
  out.graph = canonicalize(std::move(out.graph));
  return out;
}

MultimodalGraph edge_sparsify(const MultimodalGraph& graph, double ratio, std::uint64_t seed) {
  checked_ratio(ratio, 0.9, "deletion");
  const std::size_t m = graph.num_edges();
  const auto count = std::size_t(std::lround(ratio * double(m)));
  if (count == 0) return graph;

  Rng rng(seed);
  const std::vector<std::size_t> picks = rng.sample_without_replacement(m, count);
  std::vector<std::uint8_t> dead(m, 0);
  for (std::size_t idx : picks) dead[idx] = 1;

  MultimodalGraph out = graph;
  out.edges.clear();
  out.edges.reserve(m - count);
  for (std::size_t i = 0; i < m; ++i)
    if (!dead[i]) out.edges.push_back(graph.edges[i]);
  return canonicalize(std::move(out));
}

MultimodalGraph label_noise(const MultimodalGraph& graph, double ratio, std::uint64_t seed) {
  checked_ratio(ratio, 0.9, "label-flip");
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < graph.num_nodes; ++i)
    if (graph.labels[i] != kUnlabeled) labeled.push_back(i);
  const auto count = std::size_t(std::lround(ratio * double(labeled.size())));
  if (count == 0) return graph;
  if (graph.num_classes < 2)
    throw ConfigError("cannot flip labels with fewer than two classes");

  Rng rng(seed);
  const std::vector<std::size_t> picks = rng.sample_without_replacement(labeled.size(), count);
  MultimodalGraph out = graph;
  for (std::size_t p : picks) {
    const std::size_t i = labeled[p];
    // uniform over the other C-1 classes
    int fresh = int(rng.uniform_int(std::size_t(graph.num_classes - 1)));
    if (fresh >= out.labels[i]) fresh += 1;
    out.labels[i] = fresh;
  }
  return out;
}

LabelSparsifyResult label_sparsify(const std::vector<std::uint8_t>& train_mask, double ratio,
                                   std::uint64_t seed) {
  checked_ratio(ratio, 0.9, "train-mask");
  LabelSparsifyResult out;
  out.train_mask = train_mask;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < train_mask.size(); ++i)
    if (train_mask[i]) train.push_back(i);
  auto count = std::size_t(std::lround(ratio * double(train.size())));
  if (count >= train.size() && !train.empty()) {
    count = train.size() - 1;
    out.clamped = true;
  }
  if (count == 0) return out;

  Rng rng(seed);
  for (std::size_t p : rng.sample_without_replacement(train.size(), count))
    out.train_mask[train[p]] = 0;
  out.removed = count;
  return out;
}

MultimodalGraph feature_noise(const MultimodalGraph& graph, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
  if (sigma == 0.0) return graph;
  MultimodalGraph out = graph;
  Rng rng(seed);
  for (std::size_t m = 0; m < out.num_modalities(); ++m) {
    Mat<float>& f = out.features[m];
    for (std::size_t i = 0; i < out.num_nodes; ++i) {
      if (!out.modality_mask(i, m)) continue;
      float* row = f.row(i);
      for (std::size_t j = 0; j < f.cols(); ++j) row[j] += float(sigma * rng.normal());
    }
  }
  return out;
}

PerturbReport apply_perturb(std::vector<ClientShard>& shards, const PerturbSpec& spec) {
  spec.validate();
  PerturbReport report;
  if (spec.kind == PerturbKind::ModalityMissing) {
    apply_missing_rate(shards, spec.target_modality, spec.ratio, spec.seed);
    for (const auto& s : shards)
      report.changed += std::size_t(std::lround(spec.ratio * double(s.graph.num_nodes)));
    return report;
  }
  for (auto& shard : shards) {
    const std::uint64_t s = derive_seed(spec.seed, "shard", std::uint64_t(shard.client_id));
    switch (spec.kind) {
      case PerturbKind::EdgeNoise: {
        EdgeNoiseResult r = edge_noise(shard.graph, spec.ratio, s);
        shard.graph = std::move(r.graph);
        report.changed += r.rewired;
        report.skipped += r.skipped;
        break;
      }
      case PerturbKind::EdgeSparsify: {
        const std::size_t before = shard.graph.num_edges();
        shard.graph = edge_sparsify(shard.graph, spec.ratio, s);
        report.changed += before - shard.graph.num_edges();
        break;
      }
      case PerturbKind::LabelNoise: {
        MultimodalGraph noised = label_noise(shard.graph, spec.ratio, s);
        for (std::size_t i = 0; i < noised.num_nodes; ++i)
          report.changed += noised.labels[i] != shard.graph.labels[i];
        shard.graph = std::move(noised);
        break;
      }
      case PerturbKind::LabelSparsify: {
        LabelSparsifyResult r = label_sparsify(shard.train_mask, spec.ratio, s);
        shard.train_mask = std::move(r.train_mask);
        report.changed += r.removed;
        report.skipped += r.clamped ? 1 : 0;
        break;
      }
      default:
        break;  // FeatureNoise below, ModalityMissing handled above
    }
    if (spec.kind == PerturbKind::FeatureNoise) {
      shard.graph = feature_noise(shard.graph, spec.ratio, s);
      for (std::size_t m = 0; m < shard.graph.num_modalities(); ++m)
        for (std::size_t i = 0; i < shard.graph.num_nodes; ++i)
          report.changed += shard.graph.modality_mask(i, m) != 0;
    }
  }
  return report;
}

std::vector<SweepPoint> sweep(const std::vector<ClientShard>& base, const PerturbSpec& proto,
                              const std::vector<double>& ratios,
                              const std::vector<std::uint64_t>& seeds, const SweepRunner& run) {
  if (ratios.empty()) throw ConfigError("sweep without ratios");
  if (seeds.empty()) throw ConfigError("sweep without experiment seeds");
  for (std::size_t i = 1; i < ratios.size(); ++i)
    if (ratios[i] <= ratios[i - 1]) throw ConfigError("sweep ratios must be strictly ascending");
  for (double r : ratios) {
    PerturbSpec probe = proto;
    probe.ratio = r;
    probe.validate();
  }

  std::vector<SweepPoint> points;
  points.reserve(ratios.size());
  for (double ratio : ratios) {
    SweepPoint point;
    point.ratio = ratio;
    for (std::uint64_t seed : seeds) {
      std::vector<ClientShard> shards = base;  // fresh copy, never cumulative
      PerturbSpec spec = proto;
      spec.ratio = ratio;
      spec.seed = derive_seed(seed, "perturb");
      apply_perturb(shards, spec);
      point.values.push_back(run(shards, seed));
    }
    double mean = 0.0;
    for (double v : point.values) mean += v;
    mean /= double(point.values.size());
    point.mean = mean;
    if (point.values.size() > 1) {
      double ss = 0.0;
      for (double v : point.values) ss += (v - mean) * (v - mean);
      point.stderr_mean =
          std::sqrt(ss / double(point.values.size() - 1)) / std::sqrt(double(point.values.size()));
    }
    points.push_back(std::move(point));
  }
  return points;
}

}  // namespace mmfgl
