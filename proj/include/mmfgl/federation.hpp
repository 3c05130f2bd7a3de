#pragma once

#include <cstdint>
#include <vector>

#include "mmfgl/nn.hpp"
#include "mmfgl/partition.hpp"

namespace mmfgl {

// Reference aggregators.  FedAvg averages parameters weighted by client
// train-set size; FedProx adds a proximal pull toward the broadcast model
// during local steps; Scaffold corrects local gradients with control
// variates; FedProto exchanges class prototypes instead of parameters.
enum class Aggregator { FedAvg, FedProx, Scaffold, FedProto };

enum class OptimKind { Sgd, Adam };

enum class Split { Train, Val, Test };

// One term of the local training loss; the total is the weighted sum.
struct ObjectiveTerm {
  ObjectiveConfig::Kind kind = ObjectiveConfig::Kind::Classification;
  double weight = 1.0;
  double mask_fraction = 0.3;        // reconstruction share
  std::size_t mod_a = 0, mod_b = 1;  // contrastive views
  double temperature = 0.07;
};

struct TaskSpec {
  std::vector<ObjectiveTerm> terms;

  static TaskSpec classification() {
    return {{{ObjectiveConfig::Kind::Classification, 1.0, 0.3, 0, 1, 0.07}}};
  }
};

struct FedConfig {
  Aggregator algorithm = Aggregator::FedAvg;
  int local_epochs = 1;       // full-batch steps per round per client
  double participation = 1.0; // sampled fraction of clients, repaired to >= 1
  double mu = 0.01;           // proximal strength (FedProx)
  double proto_lambda = 1.0;  // prototype pull strength (FedProto)
  OptimKind optimizer = OptimKind::Adam;
  OptimConfig optim;
};

struct ClientState {
  int client_id = 0;
  Batch batch;
  std::vector<std::uint8_t> train_mask, val_mask, test_mask;
  std::uint64_t train_count = 0;  // aggregation weight
  ParamVector params;             // local (and, for FedProto, personal) model
  AdamState adam;                 // persists across rounds
  ParamVector scaffold_ci;        // per-client control variate, zero at start
  std::uint64_t seed = 0;
};

struct ServerState {
  ModelSpec spec;
  FedConfig config;
  ParamVector global;
  int round = 0;
  std::uint64_t seed = 0;
  ParamVector scaffold_c;              // global control variate, zero at start
  Mat<float> prototypes;               // num_classes x embedding width
  std::vector<std::uint64_t> proto_counts;
  int num_classes = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;   // ascending client ids
  std::vector<double> train_loss;  // per participant, mean over local epochs
  std::vector<int> diverged;       // participants excluded from aggregation
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double eval_accuracy = 0.0;  // test micro-accuracy over all clients
  double wall_ms = 0.0;
};

// Fresh server with the shared initial model.  Scaffold demands plain SGD
// local steps (its correction assumes them), so that combination is checked
// here.
ServerState init_server(const ModelSpec& spec, const FedConfig& config, int num_classes,
                        std::uint64_t seed);

// One client per shard, every local model starting from the server's global
// parameters.
std::vector<ClientState> make_clients(const std::vector<ClientShard>& shards,
                                      const ServerState& server);

// Weighted coordinate-wise mean, accumulated in double in the given order.
ParamVector aggregate_fedavg(const std::vector<const ParamVector*>& models,
                             const std::vector<std::uint64_t>& weights);

struct LocalResult {
  double mean_loss = 0.0;  // over completed epochs
  bool diverged = false;
  int epochs_run = 0;
  ParamVector scaffold_delta_c;  // filled only on the control-variate path
};

// local_epochs optimization steps from the client's current parameters,
// applying the aggregator's extras (proximal pull, control variates,
// prototype pull).  Does not broadcast; run_round does that first.
LocalResult local_update(ClientState& client, const ServerState& server, const TaskSpec& task,
                         int round);

// Runs one federated round: sample participants, broadcast, local training,
// upload, aggregate, evaluate.  Mutates server and clients; returns the
// round telemetry.
RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TaskSpec& task);

// Micro accuracy of argmax predictions over a node mask.
double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                         const std::vector<std::uint8_t>& mask);

// Test micro-accuracy pooled over every client; FedProto evaluates each
// client's personal model, the others evaluate the shared global one.
double union_test_accuracy(const ServerState& server, const std::vector<ClientState>& clients);

// Per-client test accuracy under the same model-selection rule.
std::vector<double> per_client_test_accuracy(const ServerState& server,
                                             const std::vector<ClientState>& clients);

// Self-supervised pretraining for pretrain_rounds, then communication-free
// local finetuning of the output layer (optionally the whole model).
struct TwoStageReport {
  std::vector<RoundRecord> pretrain;
  std::vector<double> probe_accuracy;  // per client, shared model before finetune
  std::vector<double> final_accuracy;  // per client, after local finetune
};

TwoStageReport run_two_stage(ServerState& server, std::vector<ClientState>& clients,
                             const TaskSpec& pretrain_task, int pretrain_rounds,
                             int finetune_epochs, bool finetune_backbone);

// No-communication baseline: every client trains alone for the given number
// of rounds of local_epochs steps, with the same per-epoch seeding as the
// federated path.  Advances server.round, so split calls behave like one.
std::vector<RoundRecord> run_isolated(ServerState& server, std::vector<ClientState>& clients,
                                      const TaskSpec& task, int rounds);

// Prototype wire formats.  The broadcast carries an 8-byte count header and
// the matrix; the upload carries the matrix plus one 8-byte count per class
// and no header (its length is fixed by the agreed model).
std::vector<std::uint8_t> serialize_prototypes(const Mat<float>& protos);
Mat<float> deserialize_prototypes(const std::vector<std::uint8_t>& bytes, std::size_t rows,
                                  std::size_t cols);
std::vector<std::uint8_t> serialize_prototype_update(const Mat<float>& protos,
                                                     const std::vector<std::uint64_t>& counts);
void deserialize_prototype_update(const std::vector<std::uint8_t>& bytes, Mat<float>& protos,
                                  std::vector<std::uint64_t>& counts);

}  // namespace mmfgl
