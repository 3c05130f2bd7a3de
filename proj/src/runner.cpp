#include "mmfgl/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_set>

#include "json.hpp"

#include "mmfgl/bundle.hpp"
#include "mmfgl/error.hpp"
#include "mmfgl/evalmetrics.hpp"
#include "mmfgl/rng.hpp"
#include "mmfgl/synth.hpp"

namespace mmfgl {

namespace {

using nlohmann::json;

// ---- config parsing ----

json parse_json_text(const std::string& text) {
  json root = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!root.is_object()) throw ConfigError("config root must be a JSON object");
  return root;
}

// Rejects keys outside the schema so a typo cannot silently fall back to a
// default.  The path in the message is dotted from the root ($).
void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key " + path + "." + it.key());
  }
}

const json* opt(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double as_num(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + " must be a number");
  return v.get<double>();
}

long long as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
  return v.get<long long>();
}

std::string as_str(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + " must be a string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
  return v.get<bool>();
}

std::size_t as_size(const json& v, const std::string& path) {
  long long raw = as_int(v, path);
  if (raw < 0) throw ConfigError(path + " must not be negative");
  return static_cast<std::size_t>(raw);
}

Arch parse_arch(const std::string& s, const std::string& path) {
  if (s == "mlp") return Arch::Mlp;
  if (s == "gcn") return Arch::Gcn;
  if (s == "branch_gcn") return Arch::BranchGcn;
  throw ConfigError(path + " must be one of mlp, gcn, branch_gcn");
}

Fusion parse_fusion(const std::string& s, const std::string& path) {
  if (s == "masked_mean") return Fusion::MaskedMean;
  if (s == "concat") return Fusion::Concat;
  throw ConfigError(path + " must be one of masked_mean, concat");
}

Aggregator parse_algorithm(const std::string& s, const std::string& path, bool* isolated) {
  *isolated = false;
  if (s == "fedavg") return Aggregator::FedAvg;
  if (s == "fedprox") return Aggregator::FedProx;
  if (s == "scaffold") return Aggregator::Scaffold;
  if (s == "fedproto") return Aggregator::FedProto;
  if (s == "isolated") {
    // the no-communication baseline reuses the FedAvg local loop
    *isolated = true;
    return Aggregator::FedAvg;
  }
  throw ConfigError(path + " must be one of fedavg, fedprox, scaffold, fedproto, isolated");
}

OptimKind parse_optimizer(const std::string& s, const std::string& path) {
  if (s == "adam") return OptimKind::Adam;
  if (s == "sgd") return OptimKind::Sgd;
  throw ConfigError(path + " must be one of adam, sgd");
}

ModalityAxis parse_modality_axis(const std::string& s, const std::string& path) {
  if (s == "iid") return ModalityAxis::Iid;
  if (s == "noniid") return ModalityAxis::NonIid;
  throw ConfigError(path + " must be one of iid, noniid");
}

TopologyAxis parse_topology_axis(const std::string& s, const std::string& path) {
  if (s == "available") return TopologyAxis::Available;
  if (s == "sbm") return TopologyAxis::Sbm;
  if (s == "rdpg") return TopologyAxis::Rdpg;
  throw ConfigError(path + " must be one of available, sbm, rdpg");
}

LabelAxis parse_label_axis(const std::string& s, const std::string& path) {
  if (s == "iid") return LabelAxis::Iid;
  if (s == "louvain") return LabelAxis::Louvain;
  if (s == "balanced") return LabelAxis::Balanced;
  if (s == "dirichlet") return LabelAxis::Dirichlet;
  throw ConfigError(path + " must be one of iid, louvain, balanced, dirichlet");
}

PerturbKind parse_perturb_kind(const std::string& s, const std::string& path) {
  if (s == "edge_noise") return PerturbKind::EdgeNoise;
  if (s == "edge_sparsify") return PerturbKind::EdgeSparsify;
  if (s == "label_noise") return PerturbKind::LabelNoise;
  if (s == "label_sparsify") return PerturbKind::LabelSparsify;
  if (s == "feature_noise") return PerturbKind::FeatureNoise;
  if (s == "modality_missing") return PerturbKind::ModalityMissing;
  throw ConfigError(path +
                    " must be one of edge_noise, edge_sparsify, label_noise, label_sparsify, "
                    "feature_noise, modality_missing");
}

void parse_dataset(const json& obj, DatasetConfig* out) {
  check_keys(obj, "$.dataset", {"source", "bundle_path", "nodes", "classes", "sbm", "feat"});
  if (const json* v = opt(obj, "source")) out->source = as_str(*v, "$.dataset.source");
  if (const json* v = opt(obj, "bundle_path")) out->bundle_path = as_str(*v, "$.dataset.bundle_path");
  if (const json* v = opt(obj, "nodes")) out->nodes = as_size(*v, "$.dataset.nodes");
  if (const json* v = opt(obj, "classes"))
    out->classes = static_cast<int>(as_int(*v, "$.dataset.classes"));
  if (const json* v = opt(obj, "sbm")) {
    check_keys(*v, "$.dataset.sbm", {"intra_p", "inter_p"});
    if (const json* p = opt(*v, "intra_p")) out->intra_p = as_num(*p, "$.dataset.sbm.intra_p");
    if (const json* p = opt(*v, "inter_p")) out->inter_p = as_num(*p, "$.dataset.sbm.inter_p");
  }
  if (const json* v = opt(obj, "feat")) {
    check_keys(*v, "$.dataset.feat", {"sigma", "dims", "informative_modalities", "separation"});
    if (const json* p = opt(*v, "sigma")) out->feat_sigma = as_num(*p, "$.dataset.feat.sigma");
    if (const json* p = opt(*v, "separation"))
      out->separation = as_num(*p, "$.dataset.feat.separation");
    if (const json* p = opt(*v, "dims")) {
      if (!p->is_array()) throw ConfigError("$.dataset.feat.dims must be an array");
      out->feature_dims.clear();
      for (std::size_t i = 0; i < p->size(); ++i)
        out->feature_dims.push_back(as_size((*p)[i], "$.dataset.feat.dims"));
    }
    if (const json* p = opt(*v, "informative_modalities")) {
      if (!p->is_array()) throw ConfigError("$.dataset.feat.informative_modalities must be an array");
      out->informative_modalities.clear();
      for (std::size_t i = 0; i < p->size(); ++i)
        out->informative_modalities.push_back(as_size((*p)[i], "$.dataset.feat.informative_modalities"));
    }
  }
}

void parse_scenario(const json& obj, ScenarioConfig* out) {
  check_keys(obj, "$.scenario",
             {"modality", "beta", "topology", "label", "alpha", "num_clients", "topo"});
  if (const json* v = opt(obj, "modality"))
    out->modality_axis = parse_modality_axis(as_str(*v, "$.scenario.modality"), "$.scenario.modality");
  if (const json* v = opt(obj, "beta")) out->beta = as_num(*v, "$.scenario.beta");
  if (const json* v = opt(obj, "topology"))
    out->topology_axis =
        parse_topology_axis(as_str(*v, "$.scenario.topology"), "$.scenario.topology");
  if (const json* v = opt(obj, "label"))
    out->label_axis = parse_label_axis(as_str(*v, "$.scenario.label"), "$.scenario.label");
  if (const json* v = opt(obj, "alpha")) out->alpha = as_num(*v, "$.scenario.alpha");
  if (const json* v = opt(obj, "num_clients"))
    out->num_clients = static_cast<int>(as_int(*v, "$.scenario.num_clients"));
  if (const json* v = opt(obj, "topo")) {
    check_keys(*v, "$.scenario.topo", {"intra_p", "inter_p", "rdpg_noise"});
    if (const json* p = opt(*v, "intra_p"))
      out->topo_params.intra_p = as_num(*p, "$.scenario.topo.intra_p");
    if (const json* p = opt(*v, "inter_p"))
      out->topo_params.inter_p = as_num(*p, "$.scenario.topo.inter_p");
    if (const json* p = opt(*v, "rdpg_noise"))
      out->topo_params.rdpg_noise = as_num(*p, "$.scenario.topo.rdpg_noise");
  }
}

void parse_model(const json& obj, ModelConfig* out) {
  check_keys(obj, "$.model", {"arch", "hidden", "layers", "fusion", "recon_head"});
  if (const json* v = opt(obj, "arch"))
    out->arch = parse_arch(as_str(*v, "$.model.arch"), "$.model.arch");
  if (const json* v = opt(obj, "hidden")) out->hidden = as_size(*v, "$.model.hidden");
  if (const json* v = opt(obj, "layers"))
    out->layers = static_cast<int>(as_int(*v, "$.model.layers"));
  if (const json* v = opt(obj, "fusion"))
    out->fusion = parse_fusion(as_str(*v, "$.model.fusion"), "$.model.fusion");
  if (const json* v = opt(obj, "recon_head")) out->recon_head = as_bool(*v, "$.model.recon_head");
}

void parse_fed(const json& obj, FedConfig* fed, int* rounds, bool* isolated) {
  check_keys(obj, "$.fed",
             {"algorithm", "rounds", "local_epochs", "participation", "mu", "proto_lambda",
              "optimizer", "lr", "weight_decay"});
  if (const json* v = opt(obj, "algorithm"))
    fed->algorithm = parse_algorithm(as_str(*v, "$.fed.algorithm"), "$.fed.algorithm", isolated);
  if (const json* v = opt(obj, "rounds")) *rounds = static_cast<int>(as_int(*v, "$.fed.rounds"));
  if (const json* v = opt(obj, "local_epochs"))
    fed->local_epochs = static_cast<int>(as_int(*v, "$.fed.local_epochs"));
  if (const json* v = opt(obj, "participation"))
    fed->participation = as_num(*v, "$.fed.participation");
  if (const json* v = opt(obj, "mu")) fed->mu = as_num(*v, "$.fed.mu");
  if (const json* v = opt(obj, "proto_lambda")) fed->proto_lambda = as_num(*v, "$.fed.proto_lambda");
  if (const json* v = opt(obj, "optimizer"))
    fed->optimizer = parse_optimizer(as_str(*v, "$.fed.optimizer"), "$.fed.optimizer");
  if (const json* v = opt(obj, "lr")) fed->optim.lr = as_num(*v, "$.fed.lr");
  if (const json* v = opt(obj, "weight_decay"))
    fed->optim.weight_decay = as_num(*v, "$.fed.weight_decay");
}

void parse_pretrain(const json& obj, PretrainConfig* out) {
  check_keys(obj, "$.pretrain", {"objective", "rounds", "finetune_epochs", "finetune_backbone"});
  if (const json* v = opt(obj, "objective")) out->objective = as_str(*v, "$.pretrain.objective");
  if (const json* v = opt(obj, "rounds"))
    out->rounds = static_cast<int>(as_int(*v, "$.pretrain.rounds"));
  if (const json* v = opt(obj, "finetune_epochs"))
    out->finetune_epochs = static_cast<int>(as_int(*v, "$.pretrain.finetune_epochs"));
  if (const json* v = opt(obj, "finetune_backbone"))
    out->finetune_backbone = as_bool(*v, "$.pretrain.finetune_backbone");
}

void parse_perturb(const json& obj, PerturbSpec* out) {
  check_keys(obj, "$.perturb", {"kind", "ratio", "sigma", "target_modality"});
  const json* kind = opt(obj, "kind");
  if (!kind) throw ConfigError("$.perturb.kind is required");
  out->kind = parse_perturb_kind(as_str(*kind, "$.perturb.kind"), "$.perturb.kind");
  const json* ratio = opt(obj, "ratio");
  const json* sigma = opt(obj, "sigma");
  if (ratio && sigma) throw ConfigError("$.perturb takes ratio or sigma, not both");
  if (out->kind == PerturbKind::FeatureNoise) {
    if (!sigma) throw ConfigError("$.perturb.sigma is required for feature_noise");
    out->ratio = as_num(*sigma, "$.perturb.sigma");
  } else {
    if (sigma) throw ConfigError("$.perturb.sigma only applies to feature_noise");
    if (!ratio) throw ConfigError("$.perturb.ratio is required");
    out->ratio = as_num(*ratio, "$.perturb.ratio");
  }
  if (const json* v = opt(obj, "target_modality"))
    out->target_modality = as_str(*v, "$.perturb.target_modality");
}

ExperimentConfig config_from_json(const json& root) {
  check_keys(root, "$",
             {"dataset", "scenario", "model", "fed", "task", "metrics", "perturb", "pretrain",
              "seeds", "output_dir"});
  ExperimentConfig cfg;
  if (const json* v = opt(root, "dataset")) parse_dataset(*v, &cfg.dataset);
  if (const json* v = opt(root, "scenario")) parse_scenario(*v, &cfg.scenario);
  if (const json* v = opt(root, "model")) parse_model(*v, &cfg.model);
  if (const json* v = opt(root, "fed")) parse_fed(*v, &cfg.fed, &cfg.rounds, &cfg.isolated);
  if (const json* v = opt(root, "task")) cfg.task = as_str(*v, "$.task");
  if (const json* v = opt(root, "metrics")) {
    if (!v->is_array()) throw ConfigError("$.metrics must be an array of strings");
    cfg.metrics.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      cfg.metrics.push_back(as_str((*v)[i], "$.metrics"));
  }
  if (const json* v = opt(root, "perturb")) {
    PerturbSpec spec;
    parse_perturb(*v, &spec);
    cfg.perturb = spec;
  }
  if (const json* v = opt(root, "pretrain")) {
    PretrainConfig pre;
    parse_pretrain(*v, &pre);
    cfg.pretrain = pre;
  }
  if (const json* v = opt(root, "seeds")) {
    if (!v->is_array()) throw ConfigError("$.seeds must be an array of integers");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      cfg.seeds.push_back(static_cast<std::uint64_t>(as_size((*v)[i], "$.seeds")));
  }
  if (const json* v = opt(root, "output_dir")) cfg.output_dir = as_str(*v, "$.output_dir");
  cfg.validate();
  return cfg;
}

const std::map<std::string, std::vector<std::string>>& task_metric_table() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"node_classification", {"accuracy", "macro_accuracy"}},
      {"link_prediction", {"auc", "ap"}},
      {"modality_matching", {"match_acc"}},
      {"modality_retrieval", {"mrr", "recall@10"}},
  };
  return table;
}

std::vector<std::string> default_metrics(const std::string& task) {
  if (task == "node_classification") return {"accuracy"};
  return task_metric_table().at(task);
}

std::string algo_name(const ExperimentConfig& cfg) {
  if (cfg.isolated) return "isolated";
  switch (cfg.fed.algorithm) {
    case Aggregator::FedAvg: return "fedavg";
    case Aggregator::FedProx: return "fedprox";
    case Aggregator::Scaffold: return "scaffold";
    case Aggregator::FedProto: return "fedproto";
  }
  return "fedavg";
}

TaskSpec task_spec_for(const ExperimentConfig& cfg) {
  if (cfg.task == "node_classification") return TaskSpec::classification();
  ObjectiveTerm term;
  term.weight = 1.0;
  if (cfg.task == "link_prediction") {
    term.kind = ObjectiveConfig::Kind::LinkPrediction;
  } else {
    // matching and retrieval both train the two-view alignment objective
    term.kind = ObjectiveConfig::Kind::Contrastive;
    term.mod_a = 0;
    term.mod_b = 1;
    term.temperature = 0.07;
  }
  return TaskSpec{{term}};
}

TaskSpec pretrain_spec_for(const PretrainConfig& pre) {
  ObjectiveTerm term;
  if (pre.objective == "reconstruction") {
    term.kind = ObjectiveConfig::Kind::Reconstruction;
    term.mask_fraction = 0.3;
  } else {
    term.kind = ObjectiveConfig::Kind::Contrastive;
    term.mod_a = 0;
    term.mod_b = 1;
    term.temperature = 0.07;
  }
  return TaskSpec{{term}};
}

ModelSpec make_model_spec(const ModelConfig& model, const MultimodalGraph& graph) {
  ModelSpec spec;
  spec.arch = model.arch;
  for (const ModalityDesc& mod : graph.modalities) spec.in_dims.push_back(mod.feature_dim);
  spec.hidden = model.hidden;
  spec.out_dim = static_cast<std::size_t>(std::max(graph.num_classes, 1));
  spec.num_layers = model.layers;
  spec.fusion = model.fusion;
  spec.recon_head = model.recon_head;
  spec.validate();
  return spec;
}

// ---- per-round metric evaluation ----

// FedProto keeps personal models and the isolated baseline never shares one,
// so those evaluate each client's own parameters.
const ParamVector& active_params(const ExperimentConfig& cfg, const ServerState& server,
                                 const ClientState& client) {
  if (cfg.isolated || cfg.fed.algorithm == Aggregator::FedProto) return client.params;
  return server.global;
}

// Embeddings computed from a single modality: every other modality is
// blanked in both the mask and the feature matrix so the encoder only sees
// the chosen view.
Mat<float> view_embeddings(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                           std::size_t mod) {
  Batch view = batch;
  for (std::size_t i = 0; i < view.n; ++i) {
    for (std::size_t m = 0; m < view.features.size(); ++m) {
      if (m == mod) continue;
      view.modality_mask(i, m) = 0;
      float* row = view.features[m].row(i);
      std::fill(row, row + view.features[m].cols(), 0.0f);
    }
  }
  return forward(spec, params, view).embeddings;
}

double dot_rows(const Mat<float>& a, std::size_t i, const Mat<float>& b, std::size_t j) {
  double acc = 0.0;
  const float* ra = a.row(i);
  const float* rb = b.row(j);
  for (std::size_t d = 0; d < a.cols(); ++d) acc += double(ra[d]) * double(rb[d]);
  return acc;
}

double cosine_rows(const Mat<float>& a, std::size_t i, const Mat<float>& b, std::size_t j) {
  double na = std::sqrt(dot_rows(a, i, a, i));
  double nb = std::sqrt(dot_rows(b, j, b, j));
  return dot_rows(a, i, b, j) / (na * nb + 1e-12);
}

double macro_accuracy(const ExperimentConfig& cfg, const ServerState& server,
                      const std::vector<ClientState>& clients) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const ClientState& client : clients) {
    bool any = false;
    for (std::uint8_t m : client.test_mask) any = any || m;
    if (!any) continue;
    sum += evaluate_accuracy(server.spec, active_params(cfg, server, client), client.batch,
                             client.test_mask);
    counted += 1;
  }
  if (counted == 0) throw ConfigError("no client has test nodes");
  return sum / double(counted);
}

// Link scores pooled over clients: every local edge is a positive and an
// equal number of uniformly drawn non-adjacent pairs are negatives.  The
// negative draw is keyed off the client seed alone, so each round scores
// the same pairs and the curve is comparable across rounds.
void link_scores(const ExperimentConfig& cfg, const ServerState& server,
                 const std::vector<ClientState>& clients, std::vector<double>* scores,
                 std::vector<int>* labels) {
  for (const ClientState& client : clients) {
    const Batch& batch = client.batch;
    if (batch.edges.empty() || batch.n < 2) continue;
    Mat<float> z =
        forward(server.spec, active_params(cfg, server, client), batch).embeddings;
    for (const auto& [u, v] : batch.edges) {
      scores->push_back(dot_rows(z, u, z, v));
      labels->push_back(1);
    }
    Rng rng(derive_seed(client.seed, "eval_neg"));
    std::unordered_set<std::uint64_t> drawn;
    std::size_t need = batch.edges.size();
    std::size_t possible = batch.n * (batch.n - 1) / 2 - batch.edges.size();
    need = std::min(need, possible);
    std::size_t attempts = 0;
    while (drawn.size() < need && attempts < 200 * need + 200) {
      attempts += 1;
      auto u = static_cast<std::uint32_t>(rng.uniform_int(batch.n));
      auto v = static_cast<std::uint32_t>(rng.uniform_int(batch.n));
      if (u == v || batch.has_edge(u, v)) continue;
      std::uint64_t key = (std::uint64_t(std::min(u, v)) << 32) | std::uint64_t(std::max(u, v));
      if (!drawn.insert(key).second) continue;
      scores->push_back(dot_rows(z, std::min(u, v), z, std::max(u, v)));
      labels->push_back(0);
    }
  }
}

// Rows with both views present, ranked by cosine similarity from view a to
// view b.  Ties break to the lower index, so the ranking is deterministic.
void matching_rankings(const ExperimentConfig& cfg, const ServerState& server,
                       const std::vector<ClientState>& clients,
                       std::vector<std::vector<int>>* ranked, std::vector<int>* truths) {
  for (const ClientState& client : clients) {
    const Batch& batch = client.batch;
    if (batch.features.size() < 2) throw ConfigError("matching needs at least two modalities");
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < batch.n; ++i)
      if (batch.modality_mask(i, 0) && batch.modality_mask(i, 1)) present.push_back(i);
    if (present.size() < 2) continue;
    const ParamVector& params = active_params(cfg, server, client);
    Mat<float> za = view_embeddings(server.spec, params, batch, 0);
    Mat<float> zb = view_embeddings(server.spec, params, batch, 1);
    for (std::size_t qi = 0; qi < present.size(); ++qi) {
      std::vector<std::pair<double, int>> order;
      order.reserve(present.size());
      for (std::size_t ci = 0; ci < present.size(); ++ci)
        order.emplace_back(-cosine_rows(za, present[qi], zb, present[ci]),
                           static_cast<int>(ci));
      std::stable_sort(order.begin(), order.end());
      std::vector<int> list;
      list.reserve(order.size());
      for (const auto& [neg_sim, ci] : order) list.push_back(ci);
      ranked->push_back(std::move(list));
      truths->push_back(static_cast<int>(qi));
    }
  }
}

double eval_metric(const std::string& name, const ExperimentConfig& cfg,
                   const ServerState& server, const std::vector<ClientState>& clients,
                   const RoundRecord& rec) {
  if (name == "accuracy") return rec.eval_accuracy;
  if (name == "macro_accuracy") return macro_accuracy(cfg, server, clients);
  if (name == "auc" || name == "ap") {
    std::vector<double> scores;
    std::vector<int> labels;
    link_scores(cfg, server, clients, &scores, &labels);
    if (scores.empty()) throw ConfigError("no edges available for link evaluation");
    return name == "auc" ? auc_roc(scores, labels) : average_precision(scores, labels);
  }
  if (name == "match_acc" || name == "mrr" || name == "recall@10") {
    std::vector<std::vector<int>> ranked;
    std::vector<int> truths;
    matching_rankings(cfg, server, clients, &ranked, &truths);
    if (ranked.empty()) throw ConfigError("no nodes with both views present");
    if (name == "mrr") return mrr(ranked, truths);
    if (name == "recall@10") return recall_at_k(ranked, truths, 10);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < ranked.size(); ++q)
      if (!ranked[q].empty() && ranked[q][0] == truths[q]) hits += 1;
    return double(hits) / double(ranked.size());
  }
  throw ConfigError("unknown metric " + name);
}

double finite_mean(const std::vector<double>& xs) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (double x : xs) {
    if (!std::isfinite(x)) continue;
    sum += x;
    counted += 1;
  }
  return counted == 0 ? 0.0 : sum / double(counted);
}

// ---- one experiment seed ----

void run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& cell,
                  const std::string& algo, std::vector<RawRow>* out) {
  MultimodalGraph graph = build_dataset(cfg.dataset, seed);
  ScenarioConfig scenario = cfg.scenario;
  scenario.master_seed = derive_seed(seed, "scenario");
  PartitionResult part = build_scenario(graph, scenario);

  double ratio = 0.0;
  if (cfg.perturb) {
    PerturbSpec spec = *cfg.perturb;
    spec.seed = derive_seed(seed, "perturb");
    apply_perturb(part.shards, spec);
    ratio = spec.ratio;
  }

  ModelSpec spec = make_model_spec(cfg.model, graph);
  ServerState server = init_server(spec, cfg.fed, graph.num_classes, derive_seed(seed, "server"));
  std::vector<ClientState> clients = make_clients(part.shards, server);
  const std::vector<std::string> metrics =
      cfg.metrics.empty() ? default_metrics(cfg.task) : cfg.metrics;

  RawRow base;
  base.scenario = cell;
  base.algorithm = algo;
  base.seed = seed;
  base.ratio = ratio;

  if (cfg.pretrain) {
    TwoStageReport rep =
        run_two_stage(server, clients, pretrain_spec_for(*cfg.pretrain), cfg.pretrain->rounds,
                      cfg.pretrain->finetune_epochs, cfg.pretrain->finetune_backbone);
    for (const RoundRecord& rec : rep.pretrain) {
      RawRow row = base;
      row.round = rec.round;
      row.metrics["pretrain_loss"] = finite_mean(rec.train_loss);
      row.uplink_bytes = rec.uplink_bytes;
      row.downlink_bytes = rec.downlink_bytes;
      row.diverged = rec.diverged;
      row.wall_ms = rec.wall_ms;
      out->push_back(std::move(row));
    }
    RawRow row = base;
    row.round = cfg.pretrain->rounds;
    row.metrics["probe_accuracy"] = finite_mean(rep.probe_accuracy);
    row.metrics["accuracy"] = finite_mean(rep.final_accuracy);
    out->push_back(std::move(row));
    return;
  }

  TaskSpec task = task_spec_for(cfg);
  for (int r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec =
        cfg.isolated ? run_isolated(server, clients, task, 1).at(0) : run_round(server, clients, task);
    RawRow row = base;
    row.round = rec.round;
    row.uplink_bytes = rec.uplink_bytes;
    row.downlink_bytes = rec.downlink_bytes;
    row.diverged = rec.diverged;
    row.wall_ms = rec.wall_ms;
    for (const std::string& name : metrics)
      row.metrics[name] = eval_metric(name, cfg, server, clients, rec);
    out->push_back(std::move(row));
  }
}

RawRow failed_row(const std::string& cell, const std::string& algo, std::uint64_t seed,
                  const char* error_class, const char* what) {
  RawRow row;
  row.scenario = cell;
  row.algorithm = algo;
  row.seed = seed;
  row.round = -1;
  row.failed = true;
  row.error = std::string(error_class) + ": " + what;
  return row;
}

// ---- summaries ----

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / double(xs.size() - 1));
}

std::vector<SummaryRow> summarize(const std::vector<RawRow>& raw) {
  // (scenario, algorithm, ratio, metric) -> seed -> round -> value
  using Key = std::tuple<std::string, std::string, double, std::string>;
  std::map<Key, std::map<std::uint64_t, std::map<int, double>>> curves;
  for (const RawRow& row : raw) {
    if (row.failed) continue;
    for (const auto& [name, value] : row.metrics)
      curves[{row.scenario, row.algorithm, row.ratio, name}][row.seed][row.round] = value;
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, per_seed] : curves) {
    std::vector<double> finals, bests;
    std::map<int, std::pair<double, std::size_t>> round_acc;  // round -> (sum, count)
    for (const auto& [seed, curve] : per_seed) {
      if (curve.empty()) continue;
      finals.push_back(curve.rbegin()->second);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& [round, value] : curve) {
        best = std::max(best, value);
        auto& slot = round_acc[round];
        slot.first += value;
        slot.second += 1;
      }
      bests.push_back(best);
    }
    if (finals.empty()) continue;
    std::vector<double> mean_curve;
    mean_curve.reserve(round_acc.size());
    for (const auto& [round, slot] : round_acc)
      mean_curve.push_back(slot.first / double(slot.second));
    SummaryRow row;
    row.scenario = std::get<0>(key);
    row.algorithm = std::get<1>(key);
    row.ratio = std::get<2>(key);
    row.metric = std::get<3>(key);
    row.final_mean = finite_mean(finals);
    row.final_std = sample_std(finals, row.final_mean);
    row.best_mean = finite_mean(bests);
    row.best_std = sample_std(bests, row.best_mean);
    row.convergence_round = convergence_round(mean_curve);
    row.num_seeds = per_seed.size();
    out.push_back(std::move(row));
  }
  // map iteration already orders by (scenario, algorithm, ratio, metric)
  return out;
}

// ---- persistence helpers ----

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

void atomic_write(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream ofs(tmp, std::ios::binary | std::ios::trunc);
    if (!ofs) throw MissingFileError("cannot open " + tmp + " for writing");
    ofs.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!ofs) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

json raw_to_json(const RawRow& row) {
  json j;
  j["scenario"] = row.scenario;
  j["algorithm"] = row.algorithm;
  j["seed"] = row.seed;
  j["round"] = row.round;
  j["failed"] = row.failed;
  if (row.failed) {
    j["error"] = row.error;
    return j;
  }
  j["ratio"] = row.ratio;
  j["uplink_bytes"] = row.uplink_bytes;
  j["downlink_bytes"] = row.downlink_bytes;
  j["diverged"] = row.diverged;
  json m = json::object();
  for (const auto& [name, value] : row.metrics) m[name] = value;
  j["metrics"] = m;
  return j;
}

}  // namespace

// ---- public entry points ----

void ExperimentConfig::validate() const {
  if (dataset.source != "generate" && dataset.source != "bundle")
    throw ConfigError("$.dataset.source must be generate or bundle");
  if (dataset.source == "bundle" && dataset.bundle_path.empty())
    throw ConfigError("$.dataset.bundle_path is required when source is bundle");
  if (dataset.source == "generate") {
    if (dataset.classes < 2) throw ConfigError("$.dataset.classes must be at least 2");
    if (dataset.nodes < static_cast<std::size_t>(dataset.classes))
      throw ConfigError("$.dataset.nodes must cover every class");
    if (dataset.feature_dims.empty()) throw ConfigError("$.dataset.feat.dims must not be empty");
    for (std::size_t m : dataset.informative_modalities)
      if (m >= dataset.feature_dims.size())
        throw ConfigError("$.dataset.feat.informative_modalities index out of range");
    if (dataset.intra_p < 0 || dataset.intra_p > 1 || dataset.inter_p < 0 || dataset.inter_p > 1)
      throw ConfigError("$.dataset.sbm probabilities must lie in [0,1]");
    if (dataset.feat_sigma < 0) throw ConfigError("$.dataset.feat.sigma must not be negative");
  }
  if (rounds < 1) throw ConfigError("$.fed.rounds must be at least 1");
  const auto& table = task_metric_table();
  auto it = table.find(task);
  if (it == table.end())
    throw ConfigError("$.task must be one of node_classification, link_prediction, "
                      "modality_matching, modality_retrieval");
  for (const std::string& name : metrics) {
    if (std::find(it->second.begin(), it->second.end(), name) == it->second.end())
      throw ConfigError("metric " + name + " does not apply to task " + task);
  }
  if (seeds.empty()) throw ConfigError("$.seeds must not be empty");
  if (scenario.num_clients < 1) throw ConfigError("$.scenario.num_clients must be at least 1");
  if (scenario.beta <= 0) throw ConfigError("$.scenario.beta must be positive");
  if (scenario.alpha <= 0) throw ConfigError("$.scenario.alpha must be positive");
  if (perturb) perturb->validate();
  bool needs_two_views = task == "modality_matching" || task == "modality_retrieval";
  if (pretrain) {
    if (pretrain->objective != "reconstruction" && pretrain->objective != "contrastive")
      throw ConfigError("$.pretrain.objective must be reconstruction or contrastive");
    if (pretrain->objective == "reconstruction" && !model.recon_head)
      throw ConfigError("reconstruction pretraining requires $.model.recon_head");
    if (pretrain->rounds < 0) throw ConfigError("$.pretrain.rounds must not be negative");
    if (pretrain->finetune_epochs < 0)
      throw ConfigError("$.pretrain.finetune_epochs must not be negative");
    if (fed.algorithm == Aggregator::FedProto)
      throw ConfigError("pretraining and the prototype aggregator do not compose");
    if (pretrain->objective == "contrastive") needs_two_views = true;
  }
  if (needs_two_views && dataset.source == "generate" && dataset.feature_dims.size() < 2)
    throw ConfigError("two-view objectives need at least two modalities");
}

ExperimentConfig parse_config(const std::string& json_text) {
  return config_from_json(parse_json_text(json_text));
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream ifs(path, std::ios::binary);
  if (!ifs) throw MissingFileError("cannot open config " + path);
  std::ostringstream buf;
  buf << ifs.rdbuf();
  return parse_config(buf.str());
}

std::vector<ExperimentConfig> expand_matrix(const std::string& json_text) {
  json root = parse_json_text(json_text);

  // an axis is a key that may hold either a scalar or a non-empty array
  auto axis = [](const json* section, const char* key, const char* path) -> std::vector<json> {
    if (!section) return {json()};  // absent section keeps the default
    const json* v = opt(*section, key);
    if (!v) return {json()};
    if (v->is_array()) {
      if (v->empty()) throw ConfigError(std::string("empty axis ") + path);
      return std::vector<json>(v->begin(), v->end());
    }
    return {*v};
  };

  const json* scenario = opt(root, "scenario");
  const json* fed = opt(root, "fed");
  const json* perturb = opt(root, "perturb");
  std::vector<json> modalities = axis(scenario, "modality", "$.scenario.modality");
  std::vector<json> topologies = axis(scenario, "topology", "$.scenario.topology");
  std::vector<json> labels = axis(scenario, "label", "$.scenario.label");
  std::vector<json> algorithms = axis(fed, "algorithm", "$.fed.algorithm");

  std::vector<json> ratios = {json()};
  if (perturb && opt(*perturb, "ratios")) {
    if (opt(*perturb, "ratio")) throw ConfigError("$.perturb takes ratio or ratios, not both");
    const json& list = *opt(*perturb, "ratios");
    if (!list.is_array() || list.empty()) throw ConfigError("empty axis $.perturb.ratios");
    ratios.assign(list.begin(), list.end());
  }

  std::vector<ExperimentConfig> cells;
  for (const json& mod : modalities) {
    for (const json& topo : topologies) {
      for (const json& label : labels) {
        for (const json& algo : algorithms) {
          for (const json& ratio : ratios) {
            json cell = root;
            if (!mod.is_null()) cell["scenario"]["modality"] = mod;
            if (!topo.is_null()) cell["scenario"]["topology"] = topo;
            if (!label.is_null()) cell["scenario"]["label"] = label;
            if (!algo.is_null()) cell["fed"]["algorithm"] = algo;
            if (!ratio.is_null()) {
              cell["perturb"].erase("ratios");
              cell["perturb"]["ratio"] = ratio;
            }
            cells.push_back(config_from_json(cell));
          }
        }
      }
    }
  }
  return cells;
}

MultimodalGraph build_dataset(const DatasetConfig& config, std::uint64_t seed) {
  if (config.source == "bundle") return load_bundle(config.bundle_path);
  if (config.source != "generate")
    throw ConfigError("$.dataset.source must be generate or bundle");
  if (config.classes < 2) throw ConfigError("$.dataset.classes must be at least 2");
  if (config.nodes < static_cast<std::size_t>(config.classes))
    throw ConfigError("$.dataset.nodes must cover every class");

  std::vector<std::size_t> blocks(static_cast<std::size_t>(config.classes),
                                  config.nodes / static_cast<std::size_t>(config.classes));
  for (std::size_t i = 0; i < config.nodes % static_cast<std::size_t>(config.classes); ++i)
    blocks[i] += 1;

  SbmParams sbm;
  sbm.block_sizes = blocks;
  sbm.intra_p = config.intra_p;
  sbm.inter_p = config.inter_p;
  sbm.seed = derive_seed(seed, "sbm");
  MultimodalGraph graph = generate_sbm(sbm);

  FeatureSynthParams feat =
      FeatureSynthParams::make(config.classes, config.feature_dims, config.feat_sigma,
                               config.informative_modalities, config.separation);
  return synthesize_features(std::move(graph), feat, derive_seed(seed, "features"));
}

ResultsTable run_experiment(const ExperimentConfig& config) {
  config.validate();
  ResultsTable table;

  // the cell label must match across seeds, so the hash is taken with the
  // per-seed master seed zeroed out
  ScenarioConfig neutral = config.scenario;
  neutral.master_seed = 0;
  const std::string cell = scenario_hash(neutral);
  const std::string algo = algo_name(config);

  for (std::uint64_t seed : config.seeds) {
    try {
      run_one_seed(config, seed, cell, algo, &table.raw);
    } catch (const ConfigError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "ConfigError", e.what()));
    } catch (const DimensionMismatchError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "DimensionMismatchError", e.what()));
    } catch (const TruncatedPayloadError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "TruncatedPayloadError", e.what()));
    } catch (const MissingFileError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "MissingFileError", e.what()));
    } catch (const StructuralError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "StructuralError", e.what()));
    } catch (const NumericError& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "NumericError", e.what()));
    } catch (const Error& e) {
      table.raw.push_back(failed_row(cell, algo, seed, "Error", e.what()));
    }
  }
  table.summary = summarize(table.raw);
  return table;
}

ResultsTable run_matrix(const std::string& json_text, int workers) {
  std::vector<ExperimentConfig> cells = expand_matrix(json_text);
  std::vector<std::vector<RawRow>> slots(cells.size());
  std::vector<std::string> failures(cells.size());

  int pool_size = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        slots[i] = run_experiment(cells[i]).raw;
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (pool_size == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(pool_size));
    for (int t = 0; t < pool_size; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::string& msg : failures)
    if (!msg.empty()) throw Error("matrix cell failed: " + msg);

  // cells commit in declaration order regardless of which worker ran them
  ResultsTable table;
  for (std::vector<RawRow>& slot : slots)
    for (RawRow& row : slot) table.raw.push_back(std::move(row));
  table.summary = summarize(table.raw);
  return table;
}

void write_results(const ResultsTable& table, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  // wall_ms varies run to run, so it lives in timing.jsonl and the science
  // files stay byte-reproducible
  std::string raw_text, timing_text;
  for (const RawRow& row : table.raw) {
    raw_text += raw_to_json(row).dump();
    raw_text += "\n";
    if (row.failed) continue;
    json t;
    t["scenario"] = row.scenario;
    t["algorithm"] = row.algorithm;
    t["seed"] = row.seed;
    t["round"] = row.round;
    t["wall_ms"] = row.wall_ms;
    timing_text += t.dump();
    timing_text += "\n";
  }

  std::string csv = "scenario,algorithm,ratio,metric,final_mean,final_std,best_mean,best_std,"
                    "convergence_round,num_seeds\n";
  for (const SummaryRow& row : table.summary) {
    csv += row.scenario + "," + row.algorithm + "," + fmt_double(row.ratio) + "," + row.metric +
           "," + fmt_double(row.final_mean) + "," + fmt_double(row.final_std) + "," +
           fmt_double(row.best_mean) + "," + fmt_double(row.best_std) + "," +
           std::to_string(row.convergence_round) + "," + std::to_string(row.num_seeds) + "\n";
  }

  atomic_write(out_dir + "/raw.jsonl", raw_text);
  atomic_write(out_dir + "/timing.jsonl", timing_text);
  atomic_write(out_dir + "/summary.csv", csv);
}

std::vector<RawRow> read_raw_rows(const std::string& path) {
  std::ifstream ifs(path, std::ios::binary);
  if (!ifs) throw MissingFileError("cannot open " + path);
  std::vector<RawRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ifs, line)) {
    lineno += 1;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ConfigError(path + ":" + std::to_string(lineno) + " is not a JSON object");
    RawRow row;
    if (const json* v = opt(j, "scenario")) row.scenario = as_str(*v, "scenario");
    if (const json* v = opt(j, "algorithm")) row.algorithm = as_str(*v, "algorithm");
    if (const json* v = opt(j, "seed")) row.seed = static_cast<std::uint64_t>(as_size(*v, "seed"));
    if (const json* v = opt(j, "round")) row.round = static_cast<int>(as_int(*v, "round"));
    if (const json* v = opt(j, "failed")) row.failed = as_bool(*v, "failed");
    if (const json* v = opt(j, "error")) row.error = as_str(*v, "error");
    if (const json* v = opt(j, "ratio")) row.ratio = as_num(*v, "ratio");
    if (const json* v = opt(j, "uplink_bytes"))
      row.uplink_bytes = static_cast<std::uint64_t>(as_size(*v, "uplink_bytes"));
    if (const json* v = opt(j, "downlink_bytes"))
      row.downlink_bytes = static_cast<std::uint64_t>(as_size(*v, "downlink_bytes"));
    if (const json* v = opt(j, "diverged")) {
      if (!v->is_array()) throw ConfigError("diverged must be an array");
      for (const json& d : *v) row.diverged.push_back(static_cast<int>(as_int(d, "diverged")));
    }
    if (const json* v = opt(j, "metrics")) {
      if (!v->is_object()) throw ConfigError("metrics must be an object");
      for (auto it = v->begin(); it != v->end(); ++it) {
        if (it.value().is_null())
          row.metrics[it.key()] = std::numeric_limits<double>::quiet_NaN();
        else
          row.metrics[it.key()] = as_num(it.value(), "metrics." + it.key());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

CostModel make_cost_model(const ModelSpec& spec, std::size_t n, std::size_t m, int local_epochs) {
  if (local_epochs < 1) throw ConfigError("cost model needs at least one epoch");
  CostModel cost;
  cost.layers = static_cast<std::size_t>(spec.num_layers);
  cost.n = n;
  cost.m = m;
  cost.f = spec.input_total();
  cost.h = spec.hidden;
  cost.params = ParamVector(spec).size();
  cost.epochs = static_cast<std::size_t>(local_epochs);
  // dense transforms cost n*f*h per layer; the sparse aggregation adds m*h
  // for the convolutional variants
  switch (spec.arch) {
    case Arch::Mlp:
      cost.time_class = "epochs * L * n * f * h";
      break;
    case Arch::Gcn:
    case Arch::BranchGcn:
      cost.time_class = "epochs * L * (m * h + n * f * h)";
      break;
  }
  return cost;
}

ScalingFit measure_scaling(char axis, const std::vector<std::size_t>& grid, std::size_t base_n,
                           std::size_t base_m, std::size_t base_f, int reps, std::uint64_t seed) {
  if (axis != 'n' && axis != 'm' && axis != 'f')
    throw ConfigError("scaling axis must be n, m, or f");
  if (grid.size() < 3) throw ConfigError("scaling grid needs at least 3 points");
  if (reps < 1) throw ConfigError("scaling reps must be positive");
  for (std::size_t v : grid)
    if (v == 0) throw ConfigError("scaling grid values must be positive");

  ScalingFit fit;
  fit.axis = axis;

  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    std::size_t n = base_n, m = base_m, f = base_f;
    if (axis == 'n') n = grid[idx];
    if (axis == 'm') m = grid[idx];
    if (axis == 'f') f = grid[idx];
    if (n < 2) throw ConfigError("scaling needs at least 2 nodes");
    if (f < 1) throw ConfigError("scaling needs at least 1 feature");

    MultimodalGraph graph;
    graph.num_nodes = n;
    Rng rng(derive_seed(seed, "graph", idx));
    std::size_t possible = n * (n - 1) / 2;
    std::size_t want = std::min(m, possible);
    std::set<std::uint64_t> keys;
    while (keys.size() < want) {
      auto u = static_cast<std::uint32_t>(rng.uniform_int(n));
      auto v = static_cast<std::uint32_t>(rng.uniform_int(n));
      if (u == v) continue;
      keys.insert((std::uint64_t(std::min(u, v)) << 32) | std::uint64_t(std::max(u, v)));
    }
    for (std::uint64_t key : keys)
      graph.edges.emplace_back(static_cast<std::uint32_t>(key >> 32),
                               static_cast<std::uint32_t>(key & 0xffffffffu));
    graph.modalities.push_back({"m0", f});
    Mat<float> feats(n, f);
    for (float& x : feats.data()) x = float(rng.normal());
    graph.features.push_back(std::move(feats));
    graph.modality_mask = Mat<std::uint8_t>(n, 1);
    graph.modality_mask.fill(1);
    graph.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) graph.labels[i] = static_cast<int>(i % 2);
    graph.num_classes = 2;
    graph = canonicalize(std::move(graph));

    ModelSpec spec;
    spec.arch = Arch::Gcn;
    spec.in_dims = {f};
    // the feature axis keeps hidden == f so the dense f*h term grows
    // quadratically; the other axes pin it
    spec.hidden = axis == 'f' ? f : 16;
    spec.out_dim = 2;
    spec.num_layers = 2;
    ParamVector params = init_params(spec, derive_seed(seed, "params", idx));
    Batch batch = Batch::from_graph(graph);
    ObjectiveConfig objective;
    objective.kind = ObjectiveConfig::Kind::Classification;
    objective.mask.assign(n, 1);

    objective_grad(spec, params, batch, objective);  // warm caches before timing
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      objective_grad(spec, params, batch, objective);
      auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    double median = samples.size() % 2 == 1
                        ? samples[samples.size() / 2]
                        : 0.5 * (samples[samples.size() / 2 - 1] + samples[samples.size() / 2]);
    fit.points.push_back({grid[idx], n, m, f, median});
  }

  // OLS slope in log-log space; a constant grid has no spread to fit, so the
  // slope is reported as zero by convention
  std::size_t k = fit.points.size();
  std::vector<double> xs(k), ys(k);
  for (std::size_t i = 0; i < k; ++i) {
    xs[i] = std::log(double(fit.points[i].value));
    ys[i] = std::log(std::max(fit.points[i].ms, 1e-9));
  }
  double mean_x = 0, mean_y = 0;
  for (std::size_t i = 0; i < k; ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= double(k);
  mean_y /= double(k);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (xs[i] - mean_x) * (xs[i] - mean_x);
    sxy += (xs[i] - mean_x) * (ys[i] - mean_y);
  }
  if (sxx <= 1e-12) {
    fit.slope = 0.0;
    fit.ci_half = 0.0;
    return fit;
  }
  fit.slope = sxy / sxx;
  double ss_res = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double e = ys[i] - (mean_y + fit.slope * (xs[i] - mean_x));
    ss_res += e * e;
  }
  double se = std::sqrt(ss_res / double(k - 2) / sxx);
  fit.ci_half = 2.0 * se;
  return fit;
}

std::string emit_plotdata(const ResultsTable& table, const PlotSpec& spec) {
  if (spec.x != "round" && spec.x != "ratio")
    throw ConfigError("plot x axis must be round or ratio");
  if (spec.series != "algorithm" && spec.series != "scenario")
    throw ConfigError("plot series must be algorithm or scenario");
  if (spec.metric.empty()) throw ConfigError("plot metric must be named");

  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (const RawRow& row : table.raw) {
    if (row.failed) continue;
    auto it = row.metrics.find(spec.metric);
    if (it == row.metrics.end()) continue;
    double x = spec.x == "round" ? double(row.round) : row.ratio;
    const std::string& series = spec.series == "algorithm" ? row.algorithm : row.scenario;
    groups[{series, x}].push_back(it->second);
  }
  if (groups.empty())
    throw ConfigError("metric " + spec.metric + " does not appear in the results");

  std::string csv = "x,series,mean,std\n";
  for (const auto& [key, values] : groups) {
    double mean = finite_mean(values);
    csv += fmt_double(key.second) + "," + key.first + "," + fmt_double(mean) + "," +
           fmt_double(sample_std(values, mean)) + "\n";
  }
  return csv;
}

}  // namespace mmfgl
