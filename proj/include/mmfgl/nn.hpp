#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmfgl/graph.hpp"
#include "mmfgl/mat.hpp"

namespace mmfgl {

// Backbones.  Mlp and Gcn consume the concatenation of all modality
// features; BranchGcn runs one graph-conv stack per modality and fuses the
// branch embeddings before a final graph-conv output layer.
enum class Arch { Mlp, Gcn, BranchGcn };

// How BranchGcn combines branch embeddings.  MaskedMean keeps the fused
// width equal to the hidden width no matter how many modalities are present,
// so parameter layouts stay comparable across modality scenarios.
enum class Fusion { Concat, MaskedMean };

struct ModelSpec {
  Arch arch = Arch::Gcn;
  std::vector<std::size_t> in_dims;  // one feature width per modality
  std::size_t hidden = 16;
  std::size_t out_dim = 1;
  int num_layers = 2;  // total layers, output layer included
  Fusion fusion = Fusion::MaskedMean;
  bool recon_head = false;  // adds a linear feature-reconstruction head

  std::size_t input_total() const;
  std::size_t embedding_dim() const;  // width of the pre-output activations
  void validate() const;
};

// One named block of the flat parameter array.
struct Segment {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

// All model parameters as named segments tiling one float array.  The
// segment table is a pure function of the spec, so two vectors built from
// the same spec are always layout-compatible.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const ModelSpec& spec);

  std::size_t size() const { return values_.size(); }
  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& seg(const std::string& name) const;  // ConfigError if absent

 private:
  std::vector<Segment> segments_;
  std::vector<float> values_;
};

// Glorot-uniform weights, zero biases, deterministic in the seed.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Wire format: 8-byte little-endian count, then count 32-bit floats.
std::vector<std::uint8_t> serialize_params(const ParamVector& params);
void deserialize_params(ParamVector& params, const std::vector<std::uint8_t>& bytes);

// Symmetrically normalized adjacency with self-loops in CSR form: entry
// (u,v) is 1/sqrt((deg_u+1)(deg_v+1)) for every edge and self-loop.
struct Adjacency {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;   // n+1
  std::vector<std::uint32_t> col;
  std::vector<double> val;
};

Adjacency normalize_adjacency(const MultimodalGraph& graph);

// Full-graph training view: per-modality features, presence mask, the
// normalized operator, labels, and the edge list for link objectives.
struct Batch {
  std::size_t n = 0;
  std::vector<Mat<float>> features;
  Mat<std::uint8_t> modality_mask;
  Adjacency adj;
  std::vector<int> labels;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::unordered_set<std::uint64_t> edge_keys;  // canonical u<v keys

  static Batch from_graph(const MultimodalGraph& graph);
  bool has_edge(std::uint32_t u, std::uint32_t v) const;
};

struct ForwardResult {
  Mat<float> logits;      // n x out_dim
  Mat<float> embeddings;  // n x embedding_dim, the pre-output activations
};

ForwardResult forward(const ModelSpec& spec, const ParamVector& params, const Batch& batch);

// ---- losses on model outputs (value plus gradient wrt the input) ----

struct ScalarGrad {
  double loss = 0.0;
  Mat<float> grad;
};

// Mean softmax cross-entropy over masked nodes; every masked node must be
// labeled.
ScalarGrad softmax_cross_entropy(const Mat<float>& logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>& mask);

// Binary cross-entropy on sigmoid(z_u . z_v), positives then negatives.
ScalarGrad link_bce(const Mat<float>& z,
                    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pos,
                    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& neg);

struct PairGrad {
  double loss = 0.0;
  Mat<float> grad_a, grad_b;
};

// Symmetric InfoNCE over row-aligned embeddings; rows are L2-normalized
// internally and the returned gradients account for that normalization.
PairGrad info_nce(const Mat<float>& z_a, const Mat<float>& z_b, double temperature = 0.07);

// ---- end-to-end objectives (value plus gradient wrt the parameters) ----

struct ObjectiveConfig {
  enum class Kind {
    Classification,
    LinkPrediction,
    Reconstruction,
    Contrastive,
    PrototypeAlignment
  };
  Kind kind = Kind::Classification;
  std::vector<std::uint8_t> mask;    // Classification/PrototypeAlignment: which nodes count
  double mask_fraction = 0.3;        // Reconstruction: share of rows hidden
  std::uint64_t seed = 0;            // Reconstruction row pick / negative sampling
  std::size_t mod_a = 0, mod_b = 1;  // Contrastive: the two views
  double temperature = 0.07;
  Mat<float> anchors;                // PrototypeAlignment: one target row per class
  double strength = 1.0;             // PrototypeAlignment: pull weight
};

struct GradResult {
  double loss = 0.0;
  std::vector<float> grad;  // same layout as the ParamVector
};

GradResult objective_grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                          const ObjectiveConfig& objective);

// Central-difference check of objective_grad on a small instance, in double
// precision, over a random 5% sample of coordinates (at least one).
// Returns the max relative error.
double grad_check(const ModelSpec& spec, const Batch& batch, const ObjectiveConfig& objective,
                  std::uint64_t seed);

// Per-class mean of the pre-output embeddings over masked nodes, plus the
// per-class node counts.  Classes absent from the mask get a zero row.
struct PrototypeResult {
  Mat<float> prototypes;  // num_classes x embedding_dim
  std::vector<std::uint64_t> counts;
};

PrototypeResult class_prototypes(const ModelSpec& spec, const ParamVector& params,
                                 const Batch& batch, const std::vector<std::uint8_t>& mask,
                                 int num_classes);

// ---- optimizers ----

struct OptimConfig {
  double lr = 5e-3;
  double weight_decay = 1e-5;  // coupled L2, applied inside the gradient
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void sgd_step(ParamVector& params, const std::vector<float>& grad, const OptimConfig& config);

struct AdamState {
  std::uint64_t t = 0;
  std::vector<float> m, v;
};

void adam_step(ParamVector& params, const std::vector<float>& grad, const OptimConfig& config,
               AdamState& state);

}  // namespace mmfgl
