#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmfgl/graph.hpp"

namespace mmfgl {

// Flat metric-name -> value map with optional per-class breakdowns.
// Serializes to flat JSON in the runner's persistence layer.
struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, std::vector<double>> per_class;
};

// ---- classification ----

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_f1;
};

// Macro-averaged precision/recall/F1 over classes 0..C-1 (C inferred from
// the data).  Classes with zero predicted (resp. true) positives contribute
// precision (resp. recall) 0 rather than NaN so degenerate predictors keep
// finite macro averages.
Prf precision_recall_f1(const std::vector<int>& preds, const std::vector<int>& labels);

// ---- ranking ----

// AP = sum over descending distinct-score thresholds of (R_n - R_{n-1}) P_n,
// with tied scores grouped into one threshold.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// Mann-Whitney AUC: (#concordant + 0.5 #tied) / (#pos #neg).
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// ranked_lists[i] is the candidate ranking for query i (best first);
// truths[i] the correct item.  A truth absent from its list counts as a miss.
double recall_at_k(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<int>& truths, int k);

// Mean reciprocal rank; absent truth contributes 0.
double mrr(const std::vector<std::vector<int>>& ranked_lists, const std::vector<int>& truths);

// ---- text overlap ----

// Lowercase + whitespace split.
std::vector<std::string> tokenize(const std::string& text);

// BP * exp(mean_n log p_n) with clipped counts and uniform weights, no
// smoothing.  Orders the candidate is too short to produce are skipped; any
// produced order with zero matches gives 0.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n = 4);

// LCS F-measure ((1+b^2) R P) / (R + b^2 P).
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta = 1.2);

// TF-IDF n-gram cosine, averaged over references, mean over n = 1..max_n,
// scaled by 10.  `corpus` is the document set defining IDF.
double cider(const std::vector<std::string>& candidate,
             const std::vector<std::vector<std::string>>& references,
             const std::vector<std::vector<std::string>>& corpus, int max_n = 4);

// ---- feature distribution shift ----

struct FeatureHistogramSet {
  std::size_t bins = 32;
  double eps = 1e-6;
  // hist[client][dim][bin], dims concatenated across modalities, each
  // histogram smoothed by eps and normalized to sum 1.
  std::vector<std::vector<std::vector<double>>> client_hist;
  std::vector<std::vector<double>> global_hist;  // [dim][bin]
  std::vector<std::uint8_t> degenerate;          // per dim: zero global range
};

FeatureHistogramSet build_feature_histograms(const std::vector<ClientShard>& shards,
                                             std::size_t bins = 32, double eps = 1e-6);

struct FeatureKlReport {
  std::vector<double> per_client;  // mean over dims of KL(client || global)
  Mat<double> pairwise;            // [i][j] = mean KL(client_i || client_j)
  std::size_t bins = 32;
  double eps = 1e-6;
  std::string direction = "client_vs_global";
};

// Masked feature rows are excluded from every histogram; degenerate
// dimensions (zero global range) contribute 0.
FeatureKlReport feature_kl(const std::vector<ClientShard>& shards, std::size_t bins = 32,
                           double eps = 1e-6);

// ---- structure ----

// Fraction of edges whose endpoints share a label.
double edge_homophily(const MultimodalGraph& graph);

struct TopologyStats {
  double degree_mean = 0.0;
  double degree_var = 0.0;  // population variance
  double degree_max = 0.0;
  double density = 0.0;     // 2m / (n (n-1))
  std::vector<double> centrality;  // degree / (n-1), 0 when n <= 1
};

TopologyStats topology_stats(const MultimodalGraph& graph);

// ---- convergence ----

// 1-indexed first round r with curve[r] >= threshold * max(curve).
int convergence_round(const std::vector<double>& curve, double threshold = 0.995);

}  // namespace mmfgl
