#include "mmfgl/evalmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "mmfgl/error.hpp"

namespace mmfgl {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw ConfigError("accuracy: empty or misaligned inputs");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return double(hit) / double(preds.size());
}

Prf precision_recall_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw ConfigError("precision_recall_f1: empty or misaligned inputs");
  int num_classes = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    num_classes = std::max({num_classes, preds[i] + 1, labels[i] + 1});

  Prf out;
  for (int c = 0; c < num_classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && labels[i] == c) ++tp;
      if (preds[i] == c && labels[i] != c) ++fp;
      if (preds[i] != c && labels[i] == c) ++fn;
    }
    double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    out.per_class_precision.push_back(p);
    out.per_class_recall.push_back(r);
    out.per_class_f1.push_back(f);
    out.precision += p;
    out.recall += r;
    out.f1 += f;
  }
  out.precision /= num_classes;
  out.recall /= num_classes;
  out.f1 /= num_classes;
  return out;
}

namespace {

// Indices sorted by descending score; tied scores stay grouped.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw ConfigError("average_precision: empty or misaligned inputs");
  double num_pos = 0;
  for (int y : labels) num_pos += y != 0;
  if (num_pos == 0) throw ConfigError("average_precision: no positive labels");

  auto order = descending_order(scores);
  double ap = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      fp += labels[order[j]] == 0;
      ++j;
    }
    double recall = tp / num_pos;
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw ConfigError("auc_roc: empty or misaligned inputs");
  double num_pos = 0, num_neg = 0;
  for (int y : labels) (y != 0 ? num_pos : num_neg) += 1;
  if (num_pos == 0 || num_neg == 0)
    throw ConfigError("auc_roc: needs at least one positive and one negative");

  auto order = descending_order(scores);
  double numerator = 0.0, pos_above = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] != 0;
      group_neg += labels[order[j]] == 0;
      ++j;
    }
    numerator += group_neg * pos_above + 0.5 * group_pos * group_neg;
    pos_above += group_pos;
    i = j;
  }
  return numerator / (num_pos * num_neg);
}

double recall_at_k(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<int>& truths, int k) {
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  if (ranked_lists.empty() || ranked_lists.size() != truths.size())
    throw ConfigError("recall_at_k: empty or misaligned inputs");
  double hit = 0;
  for (std::size_t q = 0; q < ranked_lists.size(); ++q) {
    const auto& list = ranked_lists[q];
    auto it = std::find(list.begin(), list.end(), truths[q]);
    if (it != list.end() && (it - list.begin()) < k) hit += 1;
  }
  return hit / double(ranked_lists.size());
}

double mrr(const std::vector<std::vector<int>>& ranked_lists, const std::vector<int>& truths) {
  if (ranked_lists.empty() || ranked_lists.size() != truths.size())
    throw ConfigError("mrr: empty or misaligned inputs");
  double total = 0.0;
  for (std::size_t q = 0; q < ranked_lists.size(); ++q) {
    const auto& list = ranked_lists[q];
    auto it = std::find(list.begin(), list.end(), truths[q]);
    if (it != list.end()) total += 1.0 / double(it - list.begin() + 1);
  }
  return total / double(ranked_lists.size());
}

std::vector<std::string> tokenize(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::istringstream in(lower);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, double>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (n <= 0 || tokens.size() < std::size_t(n)) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    counts[{tokens.begin() + i, tokens.begin() + i + n}] += 1.0;
  return counts;
}

}  // namespace

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  const double w = 1.0 / double(max_n);
  for (int n = 1; n <= max_n; ++n) {
    NgramCounts cand = count_ngrams(candidate, n);
    if (cand.empty()) continue;  // candidate too short for this order
    NgramCounts ref = count_ngrams(reference, n);
    double matched = 0.0, total = 0.0;
    for (const auto& [gram, count] : cand) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    if (matched == 0.0) return 0.0;
    log_sum += w * std::log(matched / total);
  }
  const double c = double(candidate.size());
  const double r = double(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t n = candidate.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (candidate[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = double(prev[m]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / double(n);
  const double r = lcs / double(m);
  const double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

double cider(const std::vector<std::string>& candidate,
             const std::vector<std::vector<std::string>>& references,
             const std::vector<std::vector<std::string>>& corpus, int max_n) {
  if (corpus.empty()) throw ConfigError("cider: empty reference corpus");
  if (references.empty()) throw ConfigError("cider: candidate has no references");
  const double num_docs = double(corpus.size());

  double total = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    // document frequencies over the corpus for this order
    NgramCounts df;
    for (const auto& doc : corpus)
      for (const auto& [gram, count] : count_ngrams(doc, n)) df[gram] += 1.0;

    auto tfidf = [&](const std::vector<std::string>& tokens) {
      NgramCounts counts = count_ngrams(tokens, n);
      double doc_total = 0.0;
      for (const auto& [gram, count] : counts) doc_total += count;
      NgramCounts vec;
      for (const auto& [gram, count] : counts) {
        auto it = df.find(gram);
        double d = it == df.end() ? 1.0 : std::max(1.0, it->second);
        vec[gram] = (count / doc_total) * std::log(num_docs / d);
      }
      return vec;
    };

    NgramCounts cand_vec = count_ngrams(candidate, n).empty() ? NgramCounts{} : tfidf(candidate);
    double cand_norm = 0.0;
    for (const auto& [gram, v] : cand_vec) cand_norm += v * v;
    cand_norm = std::sqrt(cand_norm);

    double sim_sum = 0.0;
    for (const auto& ref : references) {
      if (count_ngrams(ref, n).empty() || cand_vec.empty()) continue;
      NgramCounts ref_vec = tfidf(ref);
      double dot = 0.0, ref_norm = 0.0;
      for (const auto& [gram, v] : ref_vec) ref_norm += v * v;
      ref_norm = std::sqrt(ref_norm);
      for (const auto& [gram, v] : cand_vec) {
        auto it = ref_vec.find(gram);
        if (it != ref_vec.end()) dot += v * it->second;
      }
      if (cand_norm > 0.0 && ref_norm > 0.0) sim_sum += dot / (cand_norm * ref_norm);
    }
    total += sim_sum / double(references.size());
  }
  return 10.0 * total / double(max_n);
}

FeatureHistogramSet build_feature_histograms(const std::vector<ClientShard>& shards,
                                             std::size_t bins, double eps) {
  if (shards.empty()) throw ConfigError("feature histograms: no shards");
  const auto& modalities = shards[0].graph.modalities;
  std::size_t total_dims = 0;
  for (const auto& m : modalities) total_dims += m.feature_dim;
  for (const auto& s : shards)
    if (s.graph.modalities.size() != modalities.size())
      throw StructuralError("feature histograms: shards disagree on modality count");

  // global per-dimension range over present rows
  std::vector<double> lo(total_dims, std::numeric_limits<double>::infinity());
  std::vector<double> hi(total_dims, -std::numeric_limits<double>::infinity());
  for (const auto& s : shards) {
    std::size_t base = 0;
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      const auto& f = s.graph.features[m];
      for (std::size_t i = 0; i < f.rows(); ++i) {
        if (!s.graph.modality_mask(i, m)) continue;
        for (std::size_t j = 0; j < f.cols(); ++j) {
          lo[base + j] = std::min(lo[base + j], double(f(i, j)));
          hi[base + j] = std::max(hi[base + j], double(f(i, j)));
        }
      }
      base += f.cols();
    }
  }

  FeatureHistogramSet out;
  out.bins = bins;
  out.eps = eps;
  out.degenerate.assign(total_dims, 0);
  for (std::size_t d = 0; d < total_dims; ++d)
    if (!(hi[d] > lo[d])) out.degenerate[d] = 1;  // covers empty ranges too

  auto smooth = [&](std::vector<double> h) {
    double total = 0.0;
    for (double& v : h) {
      v += eps;
      total += v;
    }
    for (double& v : h) v /= total;
    return h;
  };

  std::vector<std::vector<double>> global_raw(total_dims, std::vector<double>(bins, 0.0));
  out.client_hist.resize(shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    std::vector<std::vector<double>> raw(total_dims, std::vector<double>(bins, 0.0));
    std::size_t base = 0;
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      const auto& f = shards[k].graph.features[m];
      for (std::size_t i = 0; i < f.rows(); ++i) {
        if (!shards[k].graph.modality_mask(i, m)) continue;
        for (std::size_t j = 0; j < f.cols(); ++j) {
          std::size_t d = base + j;
          if (out.degenerate[d]) continue;
          double t = (double(f(i, j)) - lo[d]) / (hi[d] - lo[d]);
          auto b = std::min(bins - 1, std::size_t(t * double(bins)));
          raw[d][b] += 1.0;
          global_raw[d][b] += 1.0;
        }
      }
      base += f.cols();
    }
    out.client_hist[k].reserve(total_dims);
    for (auto& h : raw) out.client_hist[k].push_back(smooth(std::move(h)));
  }
  out.global_hist.reserve(total_dims);
  for (auto& h : global_raw) out.global_hist.push_back(smooth(std::move(h)));
  return out;
}

namespace {

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) out += p[i] * std::log(p[i] / q[i]);
  return out;
}

}  // namespace

FeatureKlReport feature_kl(const std::vector<ClientShard>& shards, std::size_t bins, double eps) {
  FeatureHistogramSet hs = build_feature_histograms(shards, bins, eps);
  const std::size_t total_dims = hs.global_hist.size();
  const std::size_t num_clients = shards.size();

  FeatureKlReport out;
  out.bins = bins;
  out.eps = eps;
  out.per_client.assign(num_clients, 0.0);
  out.pairwise = Mat<double>(num_clients, num_clients, 0.0);
  if (total_dims == 0) return out;

  for (std::size_t k = 0; k < num_clients; ++k) {
    double acc = 0.0;
    for (std::size_t d = 0; d < total_dims; ++d) {
      if (hs.degenerate[d]) continue;  // contributes 0
      acc += kl(hs.client_hist[k][d], hs.global_hist[d]);
    }
    out.per_client[k] = acc / double(total_dims);
  }
  for (std::size_t a = 0; a < num_clients; ++a) {
    for (std::size_t b = 0; b < num_clients; ++b) {
      if (a == b) continue;
      double acc = 0.0;
      for (std::size_t d = 0; d < total_dims; ++d) {
        if (hs.degenerate[d]) continue;
        acc += kl(hs.client_hist[a][d], hs.client_hist[b][d]);
      }
      out.pairwise(a, b) = acc / double(total_dims);
    }
  }
  return out;
}

double edge_homophily(const MultimodalGraph& g) {
  if (g.edges.empty()) throw StructuralError("edge_homophily: graph has no edges");
  if (g.labels.size() != g.num_nodes)
    throw StructuralError("edge_homophily: graph is unlabeled");
  double same = 0.0;
  for (const auto& [u, v] : g.edges) same += g.labels[u] == g.labels[v];
  return same / double(g.edges.size());
}

TopologyStats topology_stats(const MultimodalGraph& g) {
  TopologyStats out;
  if (g.num_nodes == 0) return out;
  auto deg = degrees(g);
  double sum = 0.0, sq = 0.0, mx = 0.0;
  for (std::size_t d : deg) {
    sum += double(d);
    sq += double(d) * double(d);
    mx = std::max(mx, double(d));
  }
  const double n = double(g.num_nodes);
  out.degree_mean = sum / n;
  out.degree_var = sq / n - out.degree_mean * out.degree_mean;
  out.degree_max = mx;
  out.centrality.resize(g.num_nodes, 0.0);
  if (g.num_nodes > 1) {
    for (std::size_t i = 0; i < deg.size(); ++i) out.centrality[i] = double(deg[i]) / (n - 1.0);
    out.density = 2.0 * double(g.edges.size()) / (n * (n - 1.0));
  }
  return out;
}

int convergence_round(const std::vector<double>& curve, double threshold) {
  if (curve.empty()) throw ConfigError("convergence_round: empty curve");
  double best = *std::max_element(curve.begin(), curve.end());
  for (std::size_t r = 0; r < curve.size(); ++r)
    if (curve[r] >= threshold * best) return int(r) + 1;
  return int(curve.size());  // unreachable: max itself qualifies
}

}  // namespace mmfgl
