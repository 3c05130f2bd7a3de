#include "mmfgl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

namespace {

// Weighted graph used at the coarsened Louvain levels.  Self-loop weight is
// stored once; a node's weighted degree counts it twice.
struct LevelGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;  // neighbor, weight
  std::vector<double> self_loop;
  double total_weight = 0.0;  // m: every edge once, self-loops once

  std::size_t size() const { return adj.size(); }

  double degree(int i) const {
    double d = 2.0 * self_loop[i];
    for (const auto& [j, w] : adj[i]) d += w;
    return d;
  }
};

double level_modularity(const LevelGraph& g, const std::vector<int>& comm) {
  const double two_m = 2.0 * g.total_weight;
  if (two_m == 0.0) return 0.0;
  int num_comm = 0;
  for (int c : comm) num_comm = std::max(num_comm, c + 1);
  std::vector<double> sum_in(num_comm, 0.0), sum_tot(num_comm, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    sum_tot[comm[i]] += g.degree(int(i));
    sum_in[comm[i]] += 2.0 * g.self_loop[i];
    for (const auto& [j, w] : g.adj[i])
      if (comm[j] == comm[i]) sum_in[comm[i]] += w;  // both directions visited
  }
  double q = 0.0;
  for (int c = 0; c < num_comm; ++c)
    q += sum_in[c] / two_m - (sum_tot[c] / two_m) * (sum_tot[c] / two_m);
  return q;
}

// One round of local moves.  Returns true if anything moved.  Modularity is
// checked to be non-decreasing across the pass even in release builds.
bool louvain_local_pass(const LevelGraph& g, std::vector<int>& comm,
                        std::vector<double>& sum_tot) {
  const double two_m = 2.0 * g.total_weight;
  const double q_before = level_modularity(g, comm);
  bool moved = false;

  std::vector<double> link_weight(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int old_c = comm[int(i)];
    const double k_i = g.degree(int(i));
    sum_tot[old_c] -= k_i;

    std::vector<int> touched;
    for (const auto& [j, w] : g.adj[i]) {
      int c = comm[j];
      if (link_weight[c] == 0.0) touched.push_back(c);
      link_weight[c] += w;
    }
    if (link_weight[old_c] == 0.0) touched.push_back(old_c);

    // gain of joining c, relative to an isolated node: w_{i->c} - k_i sum_tot_c / 2m
    const double gain_old = link_weight[old_c] - k_i * sum_tot[old_c] / two_m;
    int best_c = -1;
    double best_gain = 0.0;
    for (int c : touched) {
      if (c == old_c) continue;
      double gain = link_weight[c] - k_i * sum_tot[c] / two_m;
      if (best_c == -1 || gain > best_gain + 1e-12 ||
          (std::abs(gain - best_gain) <= 1e-12 && c < best_c)) {
        best_gain = gain;
        best_c = c;
      }
    }
    for (int c : touched) link_weight[c] = 0.0;

    // move only on strictly positive gain over staying put
    if (best_c != -1 && best_gain > gain_old + 1e-12) {
      sum_tot[best_c] += k_i;
      comm[int(i)] = best_c;
      moved = true;
    } else {
      sum_tot[old_c] += k_i;
    }
  }

  const double q_after = level_modularity(g, comm);
  if (q_after < q_before - 1e-9)
    throw NumericError("louvain: modularity decreased within a pass (" +
                       std::to_string(q_before) + " -> " + std::to_string(q_after) + ")");
  return moved;
}

std::vector<int> compact_ids(const std::vector<int>& comm) {
  std::vector<int> remap(comm.size(), -1);
  std::vector<int> out(comm.size());
  int next = 0;
  for (std::size_t i = 0; i < comm.size(); ++i) {
    if (remap[comm[i]] == -1) remap[comm[i]] = next++;
    out[i] = remap[comm[i]];
  }
  return out;
}

LevelGraph aggregate(const LevelGraph& g, const std::vector<int>& comm, int num_comm) {
  LevelGraph out;
  out.adj.resize(num_comm);
  out.self_loop.assign(num_comm, 0.0);
  out.total_weight = g.total_weight;
  std::vector<std::vector<double>> weight(num_comm, std::vector<double>(num_comm, 0.0));
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.self_loop[comm[i]] += g.self_loop[i];
    for (const auto& [j, w] : g.adj[i]) {
      if (comm[j] == comm[int(i)])
        out.self_loop[comm[i]] += w / 2.0;  // each intra edge visited twice
      else
        weight[comm[i]][comm[j]] += w;
    }
  }
  for (int c = 0; c < num_comm; ++c)
    for (int d = 0; d < num_comm; ++d)
      if (weight[c][d] > 0.0) out.adj[c].emplace_back(d, weight[c][d]);
  return out;
}

}  // namespace

double modularity(const MultimodalGraph& graph, const std::vector<int>& communities) {
  LevelGraph g;
  g.adj.resize(graph.num_nodes);
  g.self_loop.assign(graph.num_nodes, 0.0);
  g.total_weight = double(graph.edges.size());
  for (const auto& [u, v] : graph.edges) {
    g.adj[u].emplace_back(int(v), 1.0);
    g.adj[v].emplace_back(int(u), 1.0);
  }
  return level_modularity(g, communities);
}

std::vector<int> louvain(const MultimodalGraph& graph) {
  std::vector<int> node_comm(graph.num_nodes);
  std::iota(node_comm.begin(), node_comm.end(), 0);
  if (graph.edges.empty()) return node_comm;

  LevelGraph g;
  g.adj.resize(graph.num_nodes);
  g.self_loop.assign(graph.num_nodes, 0.0);
  g.total_weight = double(graph.edges.size());
  for (const auto& [u, v] : graph.edges) {
    g.adj[u].emplace_back(int(v), 1.0);
    g.adj[v].emplace_back(int(u), 1.0);
  }

  for (;;) {
    std::vector<int> comm(g.size());
    std::iota(comm.begin(), comm.end(), 0);
    std::vector<double> sum_tot(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) sum_tot[i] = g.degree(int(i));

    bool any_move = false;
    while (louvain_local_pass(g, comm, sum_tot)) any_move = true;
    if (!any_move) break;

    comm = compact_ids(comm);
    int num_comm = *std::max_element(comm.begin(), comm.end()) + 1;
    for (auto& c : node_comm) c = comm[c];
    if (std::size_t(num_comm) == g.size()) break;
    g = aggregate(g, comm, num_comm);
  }
  return compact_ids(node_comm);
}

namespace {

std::string shard_provenance(const ScenarioConfig& config) {
  return "scenario=" + scenario_hash(config) + ";seed=" + std::to_string(config.master_seed);
}

// Builds shards (induced subgraphs, split masks, provenance) from a total
// node -> client assignment.  Shard-local node order is ascending global id.
PartitionResult make_result(const MultimodalGraph& graph, const std::vector<int>& assignment,
                            int num_clients, std::uint64_t master_seed,
                            const std::string& provenance) {
  PartitionResult out;
  out.assignment = assignment;
  out.shards.resize(num_clients);
  std::vector<std::vector<std::uint32_t>> owned(num_clients);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0 || assignment[i] >= num_clients)
      throw StructuralError("partition: node " + std::to_string(i) + " has no client");
    owned[assignment[i]].push_back(static_cast<std::uint32_t>(i));
  }
  for (int k = 0; k < num_clients; ++k) {
    ClientShard& shard = out.shards[k];
    shard.client_id = k;
    shard.node_global_ids = owned[k];  // ascending by construction
    shard.graph = induce_subgraph(graph, owned[k]);
    shard.provenance = provenance;
    assign_split_masks(shard, derive_seed(master_seed, "split", std::uint64_t(k)));
  }
  return out;
}

std::vector<std::uint32_t> labeled_nodes_of_class(const MultimodalGraph& g, int cls) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (!g.labels.empty() && g.labels[i] == cls) out.push_back(std::uint32_t(i));
  return out;
}

void repair_empty_clients(std::vector<std::vector<std::uint32_t>>& owned) {
  for (std::size_t k = 0; k < owned.size(); ++k) {
    while (owned[k].empty()) {
      auto largest = std::max_element(owned.begin(), owned.end(),
                                      [](const auto& a, const auto& b) { return a.size() < b.size(); });
      if (largest->size() <= 1)
        throw ConfigError("partition: cannot repair empty client, not enough nodes");
      owned[k].push_back(largest->back());
      largest->pop_back();
    }
  }
}

std::vector<int> owned_to_assignment(const std::vector<std::vector<std::uint32_t>>& owned,
                                     std::size_t num_nodes) {
  std::vector<int> assignment(num_nodes, -1);
  for (std::size_t k = 0; k < owned.size(); ++k)
    for (auto id : owned[k]) assignment[id] = int(k);
  return assignment;
}

}  // namespace

PartitionResult partition_by_labels_louvain(const MultimodalGraph& graph, int num_clients,
                                            std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition: K must be >= 1");
  if (std::size_t(num_clients) > graph.num_nodes)
    throw ConfigError("partition: K exceeds node count");

  std::vector<int> comm = louvain(graph);
  int num_comm = *std::max_element(comm.begin(), comm.end()) + 1;
  std::vector<std::vector<std::uint32_t>> groups(num_comm);
  for (std::size_t i = 0; i < comm.size(); ++i) groups[comm[i]].push_back(std::uint32_t(i));

  // Split the largest community (ties: smallest leading node id) until there
  // are at least K groups; halves keep ascending id order.
  while (groups.size() < std::size_t(num_clients)) {
    auto largest = std::max_element(groups.begin(), groups.end(),
                                    [](const auto& a, const auto& b) {
                                      if (a.size() != b.size()) return a.size() < b.size();
                                      return a.front() > b.front();
                                    });
    std::size_t half = (largest->size() + 1) / 2;
    std::vector<std::uint32_t> tail(largest->begin() + half, largest->end());
    largest->resize(half);
    groups.push_back(std::move(tail));
  }

  // Largest-first bin packing onto the least-loaded client.
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (groups[a].size() != groups[b].size()) return groups[a].size() > groups[b].size();
    return groups[a].front() < groups[b].front();
  });
  std::vector<std::vector<std::uint32_t>> owned(num_clients);
  std::vector<std::size_t> load(num_clients, 0);
  for (std::size_t gi : order) {
    int target = int(std::min_element(load.begin(), load.end()) - load.begin());
    owned[target].insert(owned[target].end(), groups[gi].begin(), groups[gi].end());
    load[target] += groups[gi].size();
  }
  for (auto& ids : owned) std::sort(ids.begin(), ids.end());

  ScenarioConfig tag;
  tag.master_seed = seed;
  tag.label_axis = LabelAxis::Louvain;
  tag.num_clients = num_clients;
  return make_result(graph, owned_to_assignment(owned, graph.num_nodes), num_clients, seed,
                     shard_provenance(tag));
}

PartitionResult partition_balanced_greedy(const MultimodalGraph& graph, int num_clients,
                                          std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition: K must be >= 1");
  const std::size_t n = graph.num_nodes;
  if (std::size_t(num_clients) > n) throw ConfigError("partition: K exceeds node count");

  std::vector<std::vector<int>> adj(n);
  for (const auto& [u, v] : graph.edges) {
    adj[u].push_back(int(v));
    adj[v].push_back(int(u));
  }

  const std::size_t base = n / std::size_t(num_clients);
  const std::size_t extra = n % std::size_t(num_clients);
  std::vector<int> assignment(n, -1);
  std::vector<int> gain(n, 0);

  std::size_t next_unassigned = 0;
  for (int k = 0; k < num_clients; ++k) {
    const std::size_t target = base + (std::size_t(k) < extra ? 1 : 0);
    std::vector<int> frontier;  // candidate nodes adjacent to the region
    std::size_t size = 0;
    while (size < target) {
      int pick = -1;
      if (!frontier.empty()) {
        for (int cand : frontier) {
          if (assignment[cand] != -1) continue;
          if (pick == -1 || gain[cand] > gain[pick] || (gain[cand] == gain[pick] && cand < pick))
            pick = cand;
        }
      }
      if (pick == -1) {
        while (assignment[next_unassigned] != -1) ++next_unassigned;
        pick = int(next_unassigned);
      }
      assignment[pick] = k;
      ++size;
      for (int nb : adj[pick]) {
        if (assignment[nb] != -1) continue;
        if (gain[nb] == 0) frontier.push_back(nb);
        ++gain[nb];
      }
      frontier.erase(std::remove_if(frontier.begin(), frontier.end(),
                                    [&](int c) { return assignment[c] != -1; }),
                     frontier.end());
    }
    for (int c : frontier) gain[c] = 0;  // reset candidates for the next region
  }

  ScenarioConfig tag;
  tag.master_seed = seed;
  tag.label_axis = LabelAxis::Balanced;
  tag.num_clients = num_clients;
  return make_result(graph, assignment, num_clients, seed, shard_provenance(tag));
}

PartitionResult partition_label_dirichlet(const MultimodalGraph& graph, int num_clients,
                                          double alpha, std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition: K must be >= 1");
  if (alpha <= 0.0) throw ConfigError("partition: alpha must be positive");
  if (graph.labels.size() != graph.num_nodes)
    throw ConfigError("partition_label_dirichlet: graph is unlabeled");
  std::size_t labeled = 0;
  for (int y : graph.labels) labeled += y != kUnlabeled;
  if (labeled < std::size_t(num_clients))
    throw ConfigError("partition_label_dirichlet: fewer labeled nodes than clients");

  Rng rng(seed);
  std::vector<std::vector<std::uint32_t>> owned(num_clients);
  for (int c = 0; c < graph.num_classes; ++c) {
    auto nodes = labeled_nodes_of_class(graph, c);
    if (nodes.empty()) continue;
    rng.shuffle(nodes);
    std::vector<double> p = rng.dirichlet(alpha, std::size_t(num_clients));

    // largest-remainder rounding of p * n_c
    std::vector<std::size_t> counts(num_clients);
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (int k = 0; k < num_clients; ++k) {
      double exact = p[k] * double(nodes.size());
      counts[k] = std::size_t(std::floor(exact));
      assigned += counts[k];
      remainders.push_back({exact - std::floor(exact), k});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t r = 0; r < nodes.size() - assigned; ++r) ++counts[remainders[r].second];

    std::size_t pos = 0;
    for (int k = 0; k < num_clients; ++k)
      for (std::size_t j = 0; j < counts[k]; ++j) owned[k].push_back(nodes[pos++]);
  }

  // unlabeled nodes are dealt round-robin so the assignment stays total
  std::vector<std::uint32_t> unlabeled;
  for (std::size_t i = 0; i < graph.num_nodes; ++i)
    if (graph.labels[i] == kUnlabeled) unlabeled.push_back(std::uint32_t(i));
  rng.shuffle(unlabeled);
  for (std::size_t i = 0; i < unlabeled.size(); ++i)
    owned[i % std::size_t(num_clients)].push_back(unlabeled[i]);

  repair_empty_clients(owned);
  for (auto& ids : owned) std::sort(ids.begin(), ids.end());

  ScenarioConfig tag;
  tag.master_seed = seed;
  tag.label_axis = LabelAxis::Dirichlet;
  tag.alpha = alpha;
  tag.num_clients = num_clients;
  return make_result(graph, owned_to_assignment(owned, graph.num_nodes), num_clients, seed,
                     shard_provenance(tag));
}

PartitionResult partition_label_iid(const MultimodalGraph& graph, int num_clients,
                                    std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition: K must be >= 1");
  if (std::size_t(num_clients) > graph.num_nodes)
    throw ConfigError("partition: K exceeds node count");
  if (graph.labels.size() != graph.num_nodes)
    throw ConfigError("partition_label_iid: graph is unlabeled");

  Rng rng(seed);
  std::vector<std::vector<std::uint32_t>> owned(num_clients);
  // classes rotate their round-robin start so totals stay even; unlabeled
  // nodes are treated as one extra pseudo-class
  for (int c = 0; c <= graph.num_classes; ++c) {
    int cls = c == graph.num_classes ? kUnlabeled : c;
    auto nodes = labeled_nodes_of_class(graph, cls);
    rng.shuffle(nodes);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      owned[(std::size_t(c) + i) % std::size_t(num_clients)].push_back(nodes[i]);
  }
  repair_empty_clients(owned);
  for (auto& ids : owned) std::sort(ids.begin(), ids.end());

  ScenarioConfig tag;
  tag.master_seed = seed;
  tag.label_axis = LabelAxis::Iid;
  tag.num_clients = num_clients;
  return make_result(graph, owned_to_assignment(owned, graph.num_nodes), num_clients, seed,
                     shard_provenance(tag));
}

void apply_modality_noniid(std::vector<ClientShard>& shards, double beta, std::uint64_t seed) {
  if (beta <= 0.0) throw ConfigError("apply_modality_noniid: beta must be positive");
  if (shards.empty()) return;
  const std::size_t num_mod = shards[0].graph.num_modalities();
  if (num_mod < 2) throw ConfigError("apply_modality_noniid: needs at least 2 modalities");

  for (std::size_t k = 0; k < shards.size(); ++k) {
    MultimodalGraph& g = shards[k].graph;
    Rng rng(derive_seed(seed, "modality", k));
    std::vector<double> rho = rng.dirichlet(beta, num_mod);

    for (std::size_t i = 0; i < g.num_nodes; ++i) {
      std::vector<std::uint8_t> before(num_mod);
      bool any_kept = false;
      for (std::size_t m = 0; m < num_mod; ++m) {
        before[m] = g.modality_mask(i, m);
        bool keep = rng.bernoulli(std::min(1.0, double(num_mod) * rho[m]));
        g.modality_mask(i, m) = static_cast<std::uint8_t>(before[m] && keep);
        any_kept |= g.modality_mask(i, m) != 0;
      }
      if (!any_kept) {
        // re-enable the highest-rho modality that was present before
        std::size_t pick = num_mod;
        double best = -1.0;
        for (std::size_t m = 0; m < num_mod; ++m)
          if (before[m] && rho[m] > best) {
            best = rho[m];
            pick = m;
          }
        if (pick < num_mod) g.modality_mask(i, pick) = 1;
      }
      for (std::size_t m = 0; m < num_mod; ++m) {
        if (g.modality_mask(i, m) || !before[m]) continue;
        float* row = g.features[m].row(i);
        std::fill(row, row + g.features[m].cols(), 0.0f);
      }
    }
  }
}

void apply_missing_rate(std::vector<ClientShard>& shards, const std::string& target_modality,
                        double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("apply_missing_rate: rate outside [0,1]");
  for (std::size_t k = 0; k < shards.size(); ++k) {
    MultimodalGraph& g = shards[k].graph;
    std::size_t target = g.num_modalities();
    for (std::size_t m = 0; m < g.num_modalities(); ++m)
      if (g.modalities[m].name == target_modality) target = m;
    if (target == g.num_modalities())
      throw ConfigError("apply_missing_rate: unknown modality " + target_modality);

    const auto count = std::size_t(std::lround(rate * double(g.num_nodes)));
    Rng rng(derive_seed(seed, "missing", k));
    auto order = rng.sample_without_replacement(g.num_nodes, g.num_nodes);
    for (std::size_t j = 0; j < count; ++j) {
      std::size_t i = order[j];
      g.modality_mask(i, target) = 0;
      float* row = g.features[target].row(i);
      std::fill(row, row + g.features[target].cols(), 0.0f);
    }
  }
}

void apply_topology_axis(std::vector<ClientShard>& shards, TopologyAxis axis,
                         const ReconstructParams& params, std::uint64_t seed) {
  if (axis == TopologyAxis::Available) return;
  const ReconstructMethod method =
      axis == TopologyAxis::Sbm ? ReconstructMethod::Sbm : ReconstructMethod::Rdpg;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    shards[k].graph.edges =
        reconstruct_topology(shards[k].graph.labels, method, params, derive_seed(seed, "topo", k));
  }
}

std::string scenario_hash(const ScenarioConfig& c) {
  std::ostringstream desc;
  desc << int(c.modality_axis) << "|" << c.beta << "|" << int(c.topology_axis) << "|"
       << c.topo_params.intra_p << "," << c.topo_params.inter_p << "," << c.topo_params.rdpg_noise
       << "|" << int(c.label_axis) << "|" << c.alpha << "|" << c.num_clients << "|"
       << c.master_seed;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : desc.str()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::size_t> label_histogram(const MultimodalGraph& graph) {
  std::vector<std::size_t> hist(std::max(graph.num_classes, 0), 0);
  for (int y : graph.labels)
    if (y != kUnlabeled) ++hist[y];
  return hist;
}

double total_variation(const std::vector<std::size_t>& hist_a,
                       const std::vector<std::size_t>& hist_b) {
  double na = 0, nb = 0;
  for (auto v : hist_a) na += double(v);
  for (auto v : hist_b) nb += double(v);
  const std::size_t classes = std::max(hist_a.size(), hist_b.size());
  double tv = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double pa = na > 0 && c < hist_a.size() ? double(hist_a[c]) / na : 0.0;
    double pb = nb > 0 && c < hist_b.size() ? double(hist_b[c]) / nb : 0.0;
    tv += std::abs(pa - pb);
  }
  return 0.5 * tv;
}

namespace {

AxisReport build_axis_report(const MultimodalGraph& graph, const PartitionResult& result) {
  AxisReport report;
  const auto global_hist = label_histogram(graph);
  const std::size_t num_mod = graph.num_modalities();

  // induced edge counts per client (before any topology transform)
  std::vector<double> induced(result.shards.size(), 0.0);
  for (const auto& [u, v] : graph.edges)
    if (result.assignment[u] == result.assignment[v]) induced[result.assignment[u]] += 1.0;

  for (const auto& shard : result.shards) {
    report.label_hist.push_back(label_histogram(shard.graph));
    report.label_tv.push_back(total_variation(report.label_hist.back(), global_hist));
    std::vector<double> coverage(num_mod, 0.0);
    if (shard.graph.num_nodes > 0) {
      for (std::size_t m = 0; m < num_mod; ++m) {
        for (std::size_t i = 0; i < shard.graph.num_nodes; ++i)
          coverage[m] += shard.graph.modality_mask(i, m);
        coverage[m] /= double(shard.graph.num_nodes);
      }
    }
    report.modality_coverage.push_back(std::move(coverage));
    double denom = induced[std::size_t(shard.client_id)];
    report.edge_retention.push_back(denom > 0.0 ? double(shard.graph.num_edges()) / denom : 1.0);
  }
  return report;
}

}  // namespace

PartitionResult build_scenario(const MultimodalGraph& graph, const ScenarioConfig& config) {
  if (config.num_clients < 1) throw ConfigError("build_scenario: K must be >= 1");

  const std::uint64_t label_seed = derive_seed(config.master_seed, "label");
  PartitionResult result;
  switch (config.label_axis) {
    case LabelAxis::Iid:
      result = partition_label_iid(graph, config.num_clients, label_seed);
      break;
    case LabelAxis::Louvain:
      result = partition_by_labels_louvain(graph, config.num_clients, label_seed);
      break;
    case LabelAxis::Balanced:
      result = partition_balanced_greedy(graph, config.num_clients, label_seed);
      break;
    case LabelAxis::Dirichlet:
      result = partition_label_dirichlet(graph, config.num_clients, config.alpha, label_seed);
      break;
  }

  const std::string provenance = shard_provenance(config);
  for (auto& shard : result.shards) shard.provenance = provenance;

  apply_topology_axis(result.shards, config.topology_axis, config.topo_params,
                      derive_seed(config.master_seed, "topology"));
  if (config.modality_axis == ModalityAxis::NonIid)
    apply_modality_noniid(result.shards, config.beta,
                          derive_seed(config.master_seed, "modality"));

  result.axis_report = build_axis_report(graph, result);
  return result;
}

}  // namespace mmfgl
